//! Mean-square stability tests.
//!
//! * i.i.d. switching: `ρ(Σ_j π_j (A_j ⊗ A_j)) < 1`.
//! * Markov switching: `ρ(diag(A_j ⊗ A_j) (Pᵀ ⊗ I_{n²})) < 1`, with the
//!   stationary-distribution status of `P` recorded in the report notes.
//! * Arbitrary occupation probabilities: `Γ(k) → 0`, checked over a finite
//!   horizon with a decreasing tail envelope.
//! * Deterministic sequences: some prefix product `A_{i_k} ⋯ A_{i_1}` has
//!   norm below one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matkit::{self, Matrix};
use crate::propagate::{lifted_operator, DIVERGENCE_BOUND};
use crate::sysmodel::{
    marginal_schedule, normalize_probability, stationary_distribution, JumpLinearSystem,
    Stationary, SwitchingLaw,
};

pub const DEFAULT_MARGIN: f64 = 1e-9;
pub const DEFAULT_HORIZON: usize = 500;
pub const DEFAULT_DECAY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
    Inconclusive,
    /// A contractive prefix product exists.
    StablePerCorollary,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
            Verdict::Inconclusive => "inconclusive",
            Verdict::StablePerCorollary => "stable-per-corollary",
        }
    }

    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Stable | Verdict::StablePerCorollary)
    }

    /// Margin rule for spectral-radius evidence.
    pub fn from_radius(rho: f64, margin: f64) -> Self {
        if rho < 1.0 - margin {
            Verdict::Stable
        } else if rho > 1.0 + margin {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub test_name: String,
    /// Spectral radius, per-step decay rate, or contraction norm depending on the test.
    pub evidence: f64,
    pub horizon_used: Option<usize>,
    pub notes: Vec<String>,
}

/// `Σ_j π_j (A_j ⊗ A_j)`.
pub fn iid_matrix(sys: &JumpLinearSystem, pi: &[f64]) -> Result<Matrix> {
    let pi = normalize_probability(pi)?;
    lifted_operator(sys, &pi)
}

pub fn iid_test(sys: &JumpLinearSystem, pi: &[f64], margin: f64) -> Result<StabilityReport> {
    let rho = matkit::spectral_radius(&iid_matrix(sys, pi)?)?;
    Ok(StabilityReport {
        verdict: Verdict::from_radius(rho, margin),
        test_name: "iid".into(),
        evidence: rho,
        horizon_used: None,
        notes: Vec::new(),
    })
}

/// `diag(A_1 ⊗ A_1, …, A_m ⊗ A_m) (Pᵀ ⊗ I_{n²})`, size `m n² x m n²`.
pub fn markov_matrix(sys: &JumpLinearSystem, transition: &Matrix) -> Result<Matrix> {
    let m = sys.m();
    if transition.rows() != m || transition.cols() != m {
        return Err(Error::Dimension(format!(
            "transition matrix is {}x{}, system has {m} modes",
            transition.rows(),
            transition.cols()
        )));
    }
    let n2 = sys.n() * sys.n();
    // block (i, j) of the product is p_ji (A_i ⊗ A_i)
    let mut out = DMatrix::zeros(m * n2, m * n2);
    for (i, a) in sys.modes().iter().enumerate() {
        let lifted = matkit::kron(a, a);
        for j in 0..m {
            let p_ji = transition.get(j, i);
            if p_ji != 0.0 {
                out.view_mut((i * n2, j * n2), (n2, n2))
                    .copy_from(&(lifted.as_dmatrix() * p_ji));
            }
        }
    }
    Ok(Matrix::wrap(out))
}

pub fn markov_test(
    sys: &JumpLinearSystem,
    transition: &Matrix,
    margin: f64,
) -> Result<StabilityReport> {
    let mut notes = Vec::new();
    match stationary_distribution(transition)? {
        Stationary::Unique(pi) => notes.push(format!(
            "stationary distribution: unique, {}",
            format_vector(&pi)
        )),
        Stationary::NonUnique { multiplicity, .. } => notes.push(format!(
            "stationary distribution: non-unique (eigenvalue 1 has multiplicity {multiplicity})"
        )),
        Stationary::NoneFound => {
            notes.push("stationary distribution: none found numerically".into())
        }
    }
    let rho = matkit::spectral_radius(&markov_matrix(sys, transition)?)?;
    Ok(StabilityReport {
        verdict: Verdict::from_radius(rho, margin),
        test_name: "markov".into(),
        evidence: rho,
        horizon_used: None,
        notes,
    })
}

/// `ln(‖Γ(k)‖_F / ‖Γ(0)‖_F)` for `k = 0..=k_max`, computed on a rescaled
/// product so neither overflow nor underflow occurs.
///
/// Entries past the step where `Γ` becomes exactly zero are `-inf`.
pub fn gamma_log_decay(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    k_max: usize,
) -> Result<Vec<f64>> {
    let schedule = marginal_schedule(law, sys.m(), k_max)?;
    let n2 = sys.n() * sys.n();
    let mut g = Matrix::identity(n2);
    let base = g.frobenius_norm();
    g = g.scale(1.0 / base);
    let mut log_norm = 0.0;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(0.0);
    for pi in &schedule {
        if log_norm == f64::NEG_INFINITY {
            out.push(log_norm);
            continue;
        }
        g = &lifted_operator(sys, pi)? * &g;
        let s = g.frobenius_norm();
        if s == 0.0 {
            log_norm = f64::NEG_INFINITY;
        } else {
            g = g.scale(1.0 / s);
            log_norm += s.ln();
        }
        out.push(log_norm);
    }
    Ok(out)
}

/// `Γ(k) → 0` over a finite horizon.
///
/// Stable when `‖Γ(k_max)‖_F < decay_tol · ‖Γ(0)‖_F` and the maximum norm
/// over the last tenth of the horizon does not exceed the maximum over the
/// tenth before it. Unstable when the norm passes the divergence bound or
/// ends above its starting value while the tail envelope is still rising.
/// Evidence is the mean per-step decay rate `(‖Γ(k_max)‖/‖Γ(0)‖)^{1/k_max}`.
pub fn general_test(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    k_max: usize,
    decay_tol: f64,
) -> Result<StabilityReport> {
    if k_max == 0 {
        return Err(Error::Config("general test needs k_max >= 1".into()));
    }
    let logs = gamma_log_decay(sys, law, k_max)?;
    let base = (sys.n() as f64).ln();
    let bound = DIVERGENCE_BOUND.ln();
    let mut notes = Vec::new();

    if let Some(k) = logs.iter().position(|&l| l + base > bound) {
        return Ok(StabilityReport {
            verdict: Verdict::Unstable,
            test_name: "gamma-decay".into(),
            evidence: (logs[k] / k as f64).exp(),
            horizon_used: Some(k),
            notes: vec![format!("‖Γ(k)‖_F exceeded {DIVERGENCE_BOUND:e} at k = {k}")],
        });
    }

    let last = logs[k_max];
    let window = (k_max / 10).max(1);
    let tail_max = |range: std::ops::RangeInclusive<usize>| {
        logs[range]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let recent = tail_max(k_max + 1 - window..=k_max);
    let earlier = tail_max(k_max.saturating_sub(2 * window)..=k_max - window);
    let rate = (last / k_max as f64).exp();
    notes.push(format!(
        "log10 ‖Γ({k_max})‖_F/‖Γ(0)‖_F = {:.6}",
        last / std::f64::consts::LN_10
    ));

    let verdict = if last < decay_tol.ln() && recent <= earlier {
        Verdict::Stable
    } else if last > 0.0 && recent > earlier {
        notes.push("tail envelope still growing".into());
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityReport {
        verdict,
        test_name: "gamma-decay".into(),
        evidence: rate,
        horizon_used: Some(k_max),
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixNorm {
    /// Largest singular value.
    #[default]
    Spectral,
    Frobenius,
}

impl MatrixNorm {
    pub fn apply(&self, m: &Matrix) -> f64 {
        match self {
            MatrixNorm::Spectral => matkit::spectral_norm(m),
            MatrixNorm::Frobenius => m.frobenius_norm(),
        }
    }
}

impl FromStr for MatrixNorm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spectral" => Ok(MatrixNorm::Spectral),
            "frobenius" => Ok(MatrixNorm::Frobenius),
            other => Err(format!(
                "unknown norm `{other}` (expected spectral or frobenius)"
            )),
        }
    }
}

impl fmt::Display for MatrixNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixNorm::Spectral => "spectral",
            MatrixNorm::Frobenius => "frobenius",
        })
    }
}

/// Scans prefix products of a (cyclically repeated, 1-based) mode sequence
/// for the first one with norm below one.
pub fn contraction_test(
    sys: &JumpLinearSystem,
    indices: &[usize],
    k_max: usize,
    norm: MatrixNorm,
) -> Result<StabilityReport> {
    SwitchingLaw::Sequence {
        indices: indices.to_vec(),
    }
    .check(sys.m())?;
    let n = sys.n();
    let mut notes = Vec::new();

    let period = indices.len();
    let mut period_product = Matrix::identity(n);
    for k in 1..=period {
        period_product = sys.mode(SwitchingLaw::sequence_mode(indices, k)) * &period_product;
    }
    if period_product.is_finite() {
        notes.push(format!(
            "one-period product (length {period}) {norm} norm: {}",
            norm.apply(&period_product)
        ));
    }

    // prefix = exp(log_scale) * scaled
    let mut scaled = Matrix::identity(n);
    let mut log_scale = 0.0f64;
    let mut smallest = f64::INFINITY;
    for k in 1..=k_max {
        scaled = sys.mode(SwitchingLaw::sequence_mode(indices, k)) * &scaled;
        let raw = norm.apply(&scaled);
        let value = if raw == 0.0 {
            0.0
        } else {
            (raw.ln() + log_scale).exp()
        };
        if value < 1.0 {
            return Ok(StabilityReport {
                verdict: Verdict::StablePerCorollary,
                test_name: "contraction".into(),
                evidence: value,
                horizon_used: Some(k),
                notes,
            });
        }
        smallest = smallest.min(value);
        log_scale += raw.ln();
        scaled = scaled.scale(1.0 / raw);
    }
    notes.push(format!("no contractive prefix up to k = {k_max}"));
    Ok(StabilityReport {
        verdict: Verdict::Inconclusive,
        test_name: "contraction".into(),
        evidence: smallest,
        horizon_used: Some(k_max),
        notes,
    })
}

pub(crate) fn format_vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}
