//! Jump linear systems, switching laws and Gaussian-mixture state densities.
//!
//! Value types here are deliberately permissive at construction time so
//! that [`validate_system`] can report every problem with a description at
//! once. Kernels that consume them call the `check_*` helpers and fail on the
//! first violation.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::matkit::{self, Matrix, PSD_TOL};

/// Tolerance on probability sums and row sums.
pub const PROB_TOL: f64 = 1e-9;

/// Negative probability entries above this are rounding noise and are clamped.
pub const PROB_CLAMP: f64 = 1e-12;

/// `x(k+1) = A_{σ(k)} x(k)` with `m` modes of dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpLinearSystem {
    modes: Vec<Matrix>,
    names: Vec<String>,
}

impl JumpLinearSystem {
    pub fn new(modes: Vec<Matrix>) -> Result<Self> {
        let names = (1..=modes.len()).map(|j| format!("A{j}")).collect();
        Self::with_names(modes, names)
    }

    pub fn with_names(modes: Vec<Matrix>, names: Vec<String>) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::Dimension("a system needs at least one mode".into()))?;
        let n = first.rows();
        for (j, a) in modes.iter().enumerate() {
            if a.rows() != n || a.cols() != n {
                return Err(Error::Dimension(format!(
                    "mode {} ({}) is {}x{}, expected {n}x{n}",
                    j + 1,
                    names.get(j).map_or("?", String::as_str),
                    a.rows(),
                    a.cols()
                )));
            }
        }
        if names.len() != modes.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} modes",
                names.len(),
                modes.len()
            )));
        }
        Ok(Self { modes, names })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.modes[0].rows()
    }

    /// Mode count.
    pub fn m(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Matrix] {
        &self.modes
    }

    pub fn mode(&self, j: usize) -> &Matrix {
        &self.modes[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Every mode scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            modes: self.modes.iter().map(|a| a.scale(c)).collect(),
            names: self.names.clone(),
        }
    }
}

/// How the active mode is chosen at each step.
///
/// `Schedule` and `Sequence` are finite; past the stored horizon a schedule
/// repeats its last vector and a sequence repeats cyclically. Sequence
/// indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchingLaw {
    Iid { pi: Vec<f64> },
    Markov { transition: Matrix, pi0: Vec<f64> },
    Schedule { pis: Vec<Vec<f64>> },
    Sequence { indices: Vec<usize> },
}

impl SwitchingLaw {
    pub fn kind(&self) -> &'static str {
        match self {
            SwitchingLaw::Iid { .. } => "iid",
            SwitchingLaw::Markov { .. } => "markov",
            SwitchingLaw::Schedule { .. } => "schedule",
            SwitchingLaw::Sequence { .. } => "sequence",
        }
    }

    /// Invariant violations against a system with `m` modes.
    pub fn violations(&self, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            SwitchingLaw::Iid { pi } => probability_violations("pi", pi, m, &mut out),
            SwitchingLaw::Markov { transition, pi0 } => {
                stochastic_violations(transition, m, &mut out);
                probability_violations("pi0", pi0, m, &mut out);
            }
            SwitchingLaw::Schedule { pis } => {
                if pis.is_empty() {
                    out.push("schedule is empty".to_string());
                }
                for (k, p) in pis.iter().enumerate() {
                    probability_violations(&format!("pi({})", k + 1), p, m, &mut out);
                }
            }
            SwitchingLaw::Sequence { indices } => {
                if indices.is_empty() {
                    out.push("sequence is empty".to_string());
                }
                for (k, &i) in indices.iter().enumerate() {
                    if i == 0 || i > m {
                        out.push(format!(
                            "sequence entry {} is mode {i}, outside 1..={m}",
                            k + 1
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn check(&self, m: usize) -> Result<()> {
        match self.violations(m).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Law(v)),
        }
    }

    /// Zero-based mode applied at step `k >= 1` of a sequence law.
    pub fn sequence_mode(indices: &[usize], k: usize) -> usize {
        debug_assert!(k >= 1 && !indices.is_empty());
        indices[(k - 1) % indices.len()] - 1
    }
}

fn probability_violations(label: &str, p: &[f64], m: usize, out: &mut Vec<String>) {
    if p.len() != m {
        out.push(format!("{label} has length {}, expected {m}", p.len()));
    }
    if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
        out.push(format!("{label} has non-finite entry {bad}"));
        return;
    }
    for (j, &v) in p.iter().enumerate() {
        if !(-PROB_CLAMP..=1.0 + PROB_TOL).contains(&v) {
            out.push(format!("{label}[{}] = {v} outside [0, 1]", j + 1));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        out.push(format!("{label}: probability sum {sum} ≠ 1"));
    }
}

fn stochastic_violations(p: &Matrix, m: usize, out: &mut Vec<String>) {
    if p.rows() != m || p.cols() != m {
        out.push(format!(
            "transition matrix is {}x{}, expected {m}x{m}",
            p.rows(),
            p.cols()
        ));
    }
    for (i, row) in p.to_rows().iter().enumerate() {
        probability_violations(&format!("P row {}", i + 1), row, p.cols(), out);
    }
}

/// Clamps rounding-level negatives and renormalizes a vector whose sum is
/// within [`PROB_TOL`] of one.
pub fn normalize_probability(p: &[f64]) -> Result<Vec<f64>> {
    let mut errs = Vec::new();
    probability_violations("probability vector", p, p.len(), &mut errs);
    if let Some(e) = errs.into_iter().next() {
        return Err(Error::Probability(e));
    }
    let clamped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    Ok(clamped.into_iter().map(|v| v / sum).collect())
}

/// One weighted Gaussian term of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: Matrix,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: &[f64], cov: Matrix) -> Self {
        Self {
            weight,
            mean: DVector::from_column_slice(mean),
            cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `μμᵀ + Σ`.
    pub fn second_moment(&self) -> Matrix {
        Matrix::wrap(&self.mean * self.mean.transpose() + self.cov.as_dmatrix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    pub fn gaussian(mean: &[f64], cov: Matrix) -> Self {
        Self::new(vec![GaussianComponent::new(1.0, mean, cov)])
    }

    /// Dirac mass at `point`.
    pub fn point_mass(point: &[f64]) -> Self {
        let n = point.len().max(1);
        Self::gaussian(point, Matrix::zeros(n, n))
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, GaussianComponent::dim)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Some(first) = self.components.first() else {
            out.push("mixture has no components".to_string());
            return out;
        };
        let n = first.dim();
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            let label = i + 1;
            if !(c.weight > 0.0 && c.weight <= 1.0 + PROB_TOL) {
                out.push(format!(
                    "component {label}: weight {} outside (0, 1]",
                    c.weight
                ));
            }
            total += c.weight;
            if c.dim() != n {
                out.push(format!(
                    "component {label}: mean has dimension {}, expected {n}",
                    c.dim()
                ));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                out.push(format!("component {label}: non-finite mean"));
            }
            if c.cov.rows() != c.dim() || c.cov.cols() != c.dim() {
                out.push(format!(
                    "component {label}: covariance is {}x{}, expected {n}x{n}",
                    c.cov.rows(),
                    c.cov.cols()
                ));
            } else if let Err(e) = check_covariance(&c.cov) {
                out.push(format!("component {label}: {e}"));
            }
        }
        if (total - 1.0).abs() > PROB_TOL {
            out.push(format!("mixture weights: probability sum {total} ≠ 1"));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Mixture(v)),
        }
    }
}

fn check_covariance(cov: &Matrix) -> Result<()> {
    let asym = cov.max_abs_diff(&cov.transpose()).unwrap_or(0.0);
    let scale = cov.max_abs().max(1.0);
    if asym > PSD_TOL * scale {
        return Err(Error::Mixture(format!(
            "covariance not symmetric (asymmetry {asym:e})"
        )));
    }
    matkit::psd_project(cov, PSD_TOL).map(|_| ())
}

/// `Φ(k) = μ̂μ̂ᵀ + Σ̂` at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentState {
    pub phi: Matrix,
    pub k: usize,
}

impl SecondMomentState {
    pub fn new(phi: Matrix, k: usize) -> Result<Self> {
        let phi = matkit::psd_project(&phi, PSD_TOL)?;
        Ok(Self { phi, k })
    }

    /// Second moment of a mixture, `Σ α_j (μ_j μ_jᵀ + Σ_j)`.
    pub fn from_mixture(mix: &GaussianMixture) -> Result<Self> {
        mix.check()?;
        let n = mix.dim();
        let mut phi = DMatrix::zeros(n, n);
        for c in &mix.components {
            phi += c.second_moment().as_dmatrix() * c.weight;
        }
        Ok(Self {
            phi: Matrix::wrap(phi).symmetrize(),
            k: 0,
        })
    }

    /// `tr Φ`, the squared distance to the Dirac at the origin.
    pub fn w2(&self) -> f64 {
        self.phi.trace()
    }
}

/// Every invariant violated by the triple.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_system(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    init: &GaussianMixture,
) -> ValidationReport {
    let mut violations = Vec::new();
    for (j, a) in sys.modes().iter().enumerate() {
        if !a.is_finite() {
            violations.push(format!(
                "mode {} ({}) has non-finite entries",
                j + 1,
                sys.names()[j]
            ));
        }
    }
    violations.extend(law.violations(sys.m()));
    violations.extend(init.violations());
    if !init.is_empty() && init.dim() != sys.n() {
        violations.push(format!(
            "dimension mismatch: initial mixture has dimension {}, system has n = {}",
            init.dim(),
            sys.n()
        ));
    }
    ValidationReport { violations }
}

/// `π(1), …, π(k_max)` for a law over `m` modes.
///
/// Markov marginals follow `π(k) = π(k-1) P`; sequence laws yield exact
/// indicator vectors.
pub fn marginal_schedule(law: &SwitchingLaw, m: usize, k_max: usize) -> Result<Vec<Vec<f64>>> {
    law.check(m)?;
    let out = match law {
        SwitchingLaw::Iid { pi } => {
            let pi = normalize_probability(pi)?;
            vec![pi; k_max]
        }
        SwitchingLaw::Markov { transition, pi0 } => {
            let p = transition.as_dmatrix();
            let mut cur = normalize_probability(pi0)?;
            let mut out = Vec::with_capacity(k_max);
            for _ in 0..k_max {
                let next: Vec<f64> = (0..m)
                    .map(|j| (0..m).map(|i| cur[i] * p[(i, j)]).sum())
                    .collect();
                cur = normalize_probability(&next)?;
                out.push(cur.clone());
            }
            out
        }
        SwitchingLaw::Schedule { pis } => {
            let stored = pis
                .iter()
                .map(|p| normalize_probability(p))
                .collect::<Result<Vec<_>>>()?;
            (0..k_max)
                .map(|k| stored[k.min(stored.len() - 1)].clone())
                .collect()
        }
        SwitchingLaw::Sequence { indices } => (1..=k_max)
            .map(|k| {
                let mut e = vec![0.0; m];
                e[SwitchingLaw::sequence_mode(indices, k)] = 1.0;
                e
            })
            .collect(),
    };
    Ok(out)
}

/// Outcome of solving `π* = π* P`.
#[derive(Debug, Clone, PartialEq)]
pub enum Stationary {
    Unique(Vec<f64>),
    /// The eigenvalue-1 eigenspace has dimension `multiplicity > 1`;
    /// `example` is one stationary vector from it.
    NonUnique {
        example: Option<Vec<f64>>,
        multiplicity: usize,
    },
    NoneFound,
}

/// Left eigenvector of `P` for eigenvalue one, normalized to a probability vector.
pub fn stationary_distribution(p: &Matrix) -> Result<Stationary> {
    let m = p.rows();
    let mut errs = Vec::new();
    stochastic_violations(p, m, &mut errs);
    if let Some(e) = errs.into_iter().next() {
        return Err(Error::NotStochastic(e));
    }
    // null space of (Pᵀ - I)
    let shifted = p.as_dmatrix().transpose() - DMatrix::<f64>::identity(m, m);
    let svd = SVD::new(shifted, false, true);
    let v_t = svd.v_t.as_ref().ok_or(Error::EigenFailure { n: m })?;
    let null_tol = 1e-10 * (m as f64).sqrt();
    let null: Vec<usize> = (0..m)
        .filter(|&i| svd.singular_values[i] <= null_tol)
        .collect();
    let smallest = (0..m)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .expect("m >= 1");

    let as_probability = |row: usize| -> Option<Vec<f64>> {
        let v: Vec<f64> = v_t.row(row).iter().copied().collect();
        let sum: f64 = v.iter().sum();
        if sum.abs() < 1e-300 {
            return None;
        }
        let mut pi: Vec<f64> = v.iter().map(|x| x / sum).collect();
        if pi.iter().any(|&x| x < -1e-9) {
            return None;
        }
        for x in &mut pi {
            *x = x.max(0.0);
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= s);
        Some(pi)
    };

    match null.len() {
        0 if svd.singular_values[smallest] > 1e-6 => Ok(Stationary::NoneFound),
        0 | 1 => Ok(as_probability(smallest).map_or(Stationary::NoneFound, Stationary::Unique)),
        k => {
            // the uniform-start Cesàro average is stationary for any stochastic P
            let example = null.iter().find_map(|&r| as_probability(r)).or_else(|| {
                let mut pi = vec![1.0 / m as f64; m];
                let mut acc = vec![0.0; m];
                for _ in 0..2000 {
                    pi = (0..m)
                        .map(|j| (0..m).map(|i| pi[i] * p.get(i, j)).sum())
                        .collect();
                    acc.iter_mut().zip(&pi).for_each(|(a, x)| *a += x / 2000.0);
                }
                Some(acc)
            });
            Ok(Stationary::NonUnique {
                example,
                multiplicity: k,
            })
        }
    }
}
