//! State-density and second-moment propagation.
//!
//! Three routes compute the same `W²(k)` trajectory:
//!
//! * `moment`: the `n x n` recursion `Φ(k) = Σ_j π_j(k) A_j Φ(k-1) A_jᵀ`,
//!   with `W²(k) = tr Φ(k)`;
//! * `gamma`: the lifted product `Γ(k) = A(k) ⋯ A(1)` with
//!   `A(i) = Σ_j π_j(i) (A_j ⊗ A_j)` and `W²(k) = vec(I)ᵀ Γ(k) vec(Φ(0))`;
//! * `exact_mog`: full Gaussian-mixture expansion, `m^k · m0` components.
//!
//! All three use the marginal probabilities `π(k)` of the switching law, so
//! a Markov law is treated through its marginals.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matkit::{self, Matrix};
use crate::sysmodel::{
    marginal_schedule, GaussianComponent, GaussianMixture, JumpLinearSystem, SecondMomentState,
    SwitchingLaw,
};
use crate::wasserstein;

/// Entries above this magnitude mark a run as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e150;

pub const DEFAULT_COMPONENT_CAP: usize = 100_000;

/// `Σ_j π_j (A_j ⊗ A_j)`.
pub fn lifted_operator(sys: &JumpLinearSystem, pi: &[f64]) -> Result<Matrix> {
    check_pi(sys, pi)?;
    let n2 = sys.n() * sys.n();
    let mut acc = DMatrix::zeros(n2, n2);
    for (a, &p) in sys.modes().iter().zip(pi) {
        if p != 0.0 {
            acc += matkit::kron(a, a).as_dmatrix() * p;
        }
    }
    Ok(Matrix::wrap(acc))
}

fn check_pi(sys: &JumpLinearSystem, pi: &[f64]) -> Result<()> {
    if pi.len() != sys.m() {
        return Err(Error::Dimension(format!(
            "probability vector has length {}, system has {} modes",
            pi.len(),
            sys.m()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MogOptions {
    /// Maximum live component count.
    pub cap: usize,
    /// Components lighter than this are dropped and the rest renormalized.
    pub weight_floor: f64,
}

impl Default for MogOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_COMPONENT_CAP,
            weight_floor: 0.0,
        }
    }
}

/// One step of the mixture recursion: each input component `(α_i, μ_i, Σ_i)`
/// and mode `j` yield `(π_j α_i, A_j μ_i, A_j Σ_i A_jᵀ)`.
///
/// Zero-weight products are never materialized.
pub fn mog_step(
    sys: &JumpLinearSystem,
    pi_k: &[f64],
    mix: &GaussianMixture,
    weight_floor: f64,
) -> Result<GaussianMixture> {
    check_pi(sys, pi_k)?;
    if mix.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "mixture has dimension {}, system has n = {}",
            mix.dim(),
            sys.n()
        )));
    }
    let mut components: Vec<GaussianComponent> = mix
        .components
        .par_iter()
        .flat_map_iter(|c| {
            sys.modes()
                .iter()
                .zip(pi_k)
                .filter(|(_, &p)| p * c.weight > 0.0)
                .map(move |(a, &p)| {
                    let ad = a.as_dmatrix();
                    GaussianComponent {
                        weight: p * c.weight,
                        mean: ad * &c.mean,
                        cov: Matrix::wrap(ad * c.cov.as_dmatrix() * ad.transpose()).symmetrize(),
                    }
                })
        })
        .collect();
    if weight_floor > 0.0 {
        components.retain(|c| c.weight >= weight_floor);
        if components.is_empty() {
            return Err(Error::Mixture(format!(
                "weight floor {weight_floor:e} pruned every component"
            )));
        }
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(GaussianMixture::new(components))
}

/// The exact state mixture after `k` steps.
pub fn mog_propagate(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    init: &GaussianMixture,
    k: usize,
    opts: MogOptions,
) -> Result<GaussianMixture> {
    init.check()?;
    let schedule = marginal_schedule(law, sys.m(), k)?;
    let mut mix = init.clone();
    for (step, pi) in schedule.iter().enumerate() {
        mix = mog_step(sys, pi, &mix, opts.weight_floor)?;
        check_cap(sys, init, step + 1, mix.len(), opts.cap)?;
    }
    Ok(mix)
}

fn check_cap(
    sys: &JumpLinearSystem,
    init: &GaussianMixture,
    steps: usize,
    live: usize,
    cap: usize,
) -> Result<()> {
    if live > cap {
        return Err(Error::ComponentCap {
            needed: (sys.m() as f64).powi(steps as i32) * init.len() as f64,
            modes: sys.m(),
            steps,
            initial: init.len(),
            cap,
        });
    }
    Ok(())
}

/// `Φ(k) = Σ_j π_j(k) A_j Φ(k-1) A_jᵀ`.
pub fn moment_step(
    sys: &JumpLinearSystem,
    pi_k: &[f64],
    phi: &SecondMomentState,
) -> Result<SecondMomentState> {
    check_pi(sys, pi_k)?;
    let n = sys.n();
    if phi.phi.rows() != n || phi.phi.cols() != n {
        return Err(Error::Dimension(format!(
            "Φ is {}x{}, system has n = {n}",
            phi.phi.rows(),
            phi.phi.cols()
        )));
    }
    let p = phi.phi.as_dmatrix();
    let mut next = DMatrix::zeros(n, n);
    for (a, &w) in sys.modes().iter().zip(pi_k) {
        if w != 0.0 {
            let ad = a.as_dmatrix();
            next += ad * p * ad.transpose() * w;
        }
    }
    Ok(SecondMomentState {
        phi: Matrix::wrap(next).symmetrize(),
        k: phi.k + 1,
    })
}

/// `Γ(k)`, the reverse-ordered product of lifted operators.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub gamma: Matrix,
    pub k: usize,
    /// Set when an entry exceeded [`DIVERGENCE_BOUND`]; `k` is then the step
    /// at which that happened and `gamma` its value there.
    pub diverged: bool,
}

pub fn gamma_product(sys: &JumpLinearSystem, law: &SwitchingLaw, k: usize) -> Result<GammaState> {
    let schedule = marginal_schedule(law, sys.m(), k)?;
    let n2 = sys.n() * sys.n();
    let mut gamma = Matrix::identity(n2);
    for (i, pi) in schedule.iter().enumerate() {
        gamma = &lifted_operator(sys, pi)? * &gamma;
        let peak = gamma.max_abs();
        if peak.is_nan() || peak > DIVERGENCE_BOUND {
            return Ok(GammaState {
                gamma,
                k: i + 1,
                diverged: true,
            });
        }
    }
    Ok(GammaState {
        gamma,
        k,
        diverged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Moment,
    Gamma,
    ExactMog,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Moment => "moment",
            Method::Gamma => "gamma",
            Method::ExactMog => "exact_mog",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "moment" => Ok(Method::Moment),
            "gamma" => Ok(Method::Gamma),
            "exact_mog" | "exact-mog" => Ok(Method::ExactMog),
            other => Err(format!(
                "unknown method `{other}` (expected moment, gamma or exact_mog)"
            )),
        }
    }
}

/// `W²(k)` at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub w2: f64,
    /// `tr Φ(k)` computed along the same route; equal to `w2` up to rounding.
    pub phi_trace: f64,
    pub component_count: Option<usize>,
}

impl TrajectoryRecord {
    pub fn w(&self) -> f64 {
        self.w2.sqrt()
    }
}

/// `W²(0), …, W²(k_max)` by the chosen route.
pub fn w2_trajectory(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    init: &GaussianMixture,
    k_max: usize,
    method: Method,
    opts: MogOptions,
) -> Result<Vec<TrajectoryRecord>> {
    init.check()?;
    if init.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial mixture has dimension {}, system has n = {}",
            init.dim(),
            sys.n()
        )));
    }
    let schedule = marginal_schedule(law, sys.m(), k_max)?;
    let phi0 = SecondMomentState::from_mixture(init)?;
    let n = sys.n();
    let mut out = Vec::with_capacity(k_max + 1);

    match method {
        Method::Moment => {
            let mut phi = phi0;
            out.push(record(0, phi.w2(), phi.w2(), None));
            for pi in &schedule {
                phi = moment_step(sys, pi, &phi)?;
                guard(phi.k, phi.phi.max_abs())?;
                out.push(record(phi.k, phi.w2(), phi.w2(), None));
            }
        }
        Method::Gamma => {
            let vec_i = matkit::vec(&Matrix::identity(n));
            let vec_phi0 = matkit::vec(&phi0.phi);
            let mut gamma = Matrix::identity(n * n);
            let w0 = (&vec_i.transpose() * &vec_phi0).get(0, 0);
            out.push(record(0, w0, phi0.w2(), None));
            for (i, pi) in schedule.iter().enumerate() {
                let k = i + 1;
                gamma = &lifted_operator(sys, pi)? * &gamma;
                guard(k, gamma.max_abs())?;
                let vec_phi = &gamma * &vec_phi0;
                let w2 = (&vec_i.transpose() * &vec_phi).get(0, 0);
                let phi_trace = matkit::unvec(&vec_phi, n, n)?.trace();
                out.push(record(k, w2, phi_trace, None));
            }
        }
        Method::ExactMog => {
            let mut mix = init.clone();
            let (w0, t0) = mixture_distances(&mix)?;
            out.push(record(0, w0, t0, Some(mix.len())));
            for (i, pi) in schedule.iter().enumerate() {
                let k = i + 1;
                mix = mog_step(sys, pi, &mix, opts.weight_floor)?;
                check_cap(sys, init, k, mix.len(), opts.cap)?;
                let (w2, phi_trace) = mixture_distances(&mix)?;
                guard(k, w2)?;
                out.push(record(k, w2, phi_trace, Some(mix.len())));
            }
        }
    }
    Ok(out)
}

fn record(k: usize, w2: f64, phi_trace: f64, component_count: Option<usize>) -> TrajectoryRecord {
    TrajectoryRecord {
        k,
        w2,
        phi_trace,
        component_count,
    }
}

fn guard(k: usize, magnitude: f64) -> Result<()> {
    if magnitude <= DIVERGENCE_BOUND {
        Ok(())
    } else {
        Err(Error::Diverged {
            k,
            bound: DIVERGENCE_BOUND,
        })
    }
}

/// Weighted component distances and the synthetic-Gaussian distance.
fn mixture_distances(mix: &GaussianMixture) -> Result<(f64, f64)> {
    let direct = wasserstein::mixture_to_dirac_sq(mix)?;
    let (mean, cov) = wasserstein::synthetic_gaussian(mix)?;
    let synthetic = mean.iter().map(|v| v * v).sum::<f64>() + cov.trace();
    Ok((direct, synthetic))
}
