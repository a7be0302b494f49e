//! Seeded Monte Carlo ensembles of `x(k+1) = A_{σ(k)} x(k)`.
//!
//! Trajectory `t` draws from its own ChaCha8 stream: the generator is seeded
//! with `seed` and switched to stream `t`, so every trajectory sees the same
//! random numbers no matter how work is split across threads. Trajectories
//! are grouped into fixed batches of [`BATCH_SIZE`]; per-batch moment
//! accumulators are merged in batch order, which makes the reduction
//! bit-identical for any thread count.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sysmodel::{
    marginal_schedule, normalize_probability, GaussianMixture, JumpLinearSystem, SwitchingLaw,
};

pub const BATCH_SIZE: usize = 256;

/// Sample kurtosis `n M4 / M2²` above which the standard error is flagged
/// as unreliable. A Gaussian has 3, an exponential 9.
pub const KURTOSIS_FLAG: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// σ(k) drawn independently from the marginal π(k).
    #[default]
    Marginal,
    /// σ(k) drawn from row σ(k-1) of the transition matrix (Markov laws only).
    Path,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Marginal => "marginal",
            Sampling::Path => "path",
        })
    }
}

impl FromStr for Sampling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "marginal" => Ok(Sampling::Marginal),
            "path" => Ok(Sampling::Path),
            other => Err(format!(
                "unknown sampling `{other}` (expected marginal or path)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trajectories: usize,
    pub k_max: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(trajectories: usize, k_max: usize, seed: u64) -> Self {
        Self {
            trajectories,
            k_max,
            seed,
            sampling: Sampling::Marginal,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub k: usize,
    /// Empirical `E‖x(k)‖²`.
    pub mean_sq: f64,
    pub stderr: f64,
    pub samples: usize,
    pub kurtosis: f64,
}

impl StepStats {
    pub fn heavy_tailed(&self) -> bool {
        self.kurtosis > KURTOSIS_FLAG
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub steps: Vec<StepStats>,
}

impl EnsembleStats {
    pub fn heavy_tailed_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.heavy_tailed())
            .map(|s| s.k)
            .collect()
    }
}

/// Draws from a Gaussian mixture with precomputed covariance factors.
#[derive(Debug, Clone)]
pub struct InitialSampler {
    cumulative: Vec<f64>,
    means: Vec<DVector<f64>>,
    factors: Vec<Option<DMatrix<f64>>>,
}

impl InitialSampler {
    pub fn new(init: &GaussianMixture) -> Result<Self> {
        init.check()?;
        let weights: Vec<f64> = init.components.iter().map(|c| c.weight).collect();
        let weights = normalize_probability(&weights)?;
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let factors = init
            .components
            .iter()
            .map(|c| covariance_factor(c.cov.as_dmatrix()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cumulative,
            means: init.components.iter().map(|c| c.mean.clone()).collect(),
            factors,
        })
    }

    pub fn component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        pick(&self.cumulative, rng.random())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let j = self.component(rng);
        let mean = &self.means[j];
        match &self.factors[j] {
            None => mean.clone(),
            Some(l) => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                mean + l * z
            }
        }
    }
}

/// Lower Cholesky factor; `None` for an all-zero covariance.
fn covariance_factor(cov: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(Some(ch.l()));
    }
    let n = cov.nrows();
    let jitter = 1e-12 * cov.trace() / n as f64;
    let jittered = cov + DMatrix::identity(n, n) * jitter;
    jittered
        .cholesky()
        .map(|ch| Some(ch.l()))
        .ok_or(Error::Factorization)
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// One draw from the initial mixture.
pub fn sample_initial<R: Rng + ?Sized>(
    init: &GaussianMixture,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(InitialSampler::new(init)?.sample(rng))
}

/// Generator for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Running central moments up to order four.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.merge(&Moments {
            n: 1.0,
            mean: x,
            ..Default::default()
        });
    }

    fn merge(&mut self, b: &Moments) {
        if b.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *b;
            return;
        }
        let (na, nb) = (self.n, b.n);
        let n = na + nb;
        let d = b.mean - self.mean;
        let d2 = d * d;
        let m4 = self.m4
            + b.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * b.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * b.m3 - nb * self.m3) / n;
        let m3 = self.m3
            + b.m3
            + d2 * d * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * b.m2 - nb * self.m2) / n;
        let m2 = self.m2 + b.m2 + d2 * na * nb / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.n = n;
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.n - 1.0) / self.n).sqrt()
    }

    fn kurtosis(&self) -> f64 {
        if self.m2 > 0.0 {
            self.n * self.m4 / (self.m2 * self.m2)
        } else {
            0.0
        }
    }
}

/// Cumulative mode distributions.
enum ModeDraw {
    Marginal(Vec<Vec<f64>>),
    Path {
        initial: Vec<f64>,
        rows: Vec<Vec<f64>>,
    },
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Empirical `E‖x(k)‖²` for `k = 0..=k_max`.
pub fn simulate_ensemble(
    sys: &JumpLinearSystem,
    law: &SwitchingLaw,
    init: &GaussianMixture,
    cfg: &SimConfig,
) -> Result<EnsembleStats> {
    if cfg.trajectories == 0 {
        return Err(Error::Config("at least one trajectory is required".into()));
    }
    if init.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial mixture has dimension {}, system has n = {}",
            init.dim(),
            sys.n()
        )));
    }
    let sampler = InitialSampler::new(init)?;
    let draw = match (cfg.sampling, law) {
        (Sampling::Marginal, _) => ModeDraw::Marginal(
            marginal_schedule(law, sys.m(), cfg.k_max)?
                .iter()
                .map(|p| cumulative(p))
                .collect(),
        ),
        (Sampling::Path, SwitchingLaw::Markov { transition, pi0 }) => {
            law.check(sys.m())?;
            let rows = transition
                .to_rows()
                .iter()
                .map(|r| normalize_probability(r).map(|p| cumulative(&p)))
                .collect::<Result<Vec<_>>>()?;
            ModeDraw::Path {
                initial: cumulative(&normalize_probability(pi0)?),
                rows,
            }
        }
        (Sampling::Path, other) => {
            return Err(Error::Config(format!(
                "path sampling needs a markov law, got {}",
                other.kind()
            )))
        }
    };

    let batches = cfg.trajectories.div_ceil(BATCH_SIZE);
    let run = || -> Vec<Vec<Moments>> {
        (0..batches)
            .into_par_iter()
            .map(|b| {
                let lo = b * BATCH_SIZE;
                let hi = (lo + BATCH_SIZE).min(cfg.trajectories);
                let mut acc = vec![Moments::default(); cfg.k_max + 1];
                for t in lo..hi {
                    run_trajectory(sys, &sampler, &draw, cfg, t as u64, &mut acc);
                }
                acc
            })
            .collect()
    };
    let per_batch = match cfg.threads {
        None => run(),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
    };

    let mut total = vec![Moments::default(); cfg.k_max + 1];
    for batch in &per_batch {
        for (t, b) in total.iter_mut().zip(batch) {
            t.merge(b);
        }
    }
    let steps = total
        .iter()
        .enumerate()
        .map(|(k, m)| StepStats {
            k,
            mean_sq: m.mean,
            stderr: m.stderr(),
            samples: m.n as usize,
            kurtosis: m.kurtosis(),
        })
        .collect();
    Ok(EnsembleStats { steps })
}

fn run_trajectory(
    sys: &JumpLinearSystem,
    sampler: &InitialSampler,
    draw: &ModeDraw,
    cfg: &SimConfig,
    index: u64,
    acc: &mut [Moments],
) {
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut x = sampler.sample(&mut rng);
    acc[0].push(x.norm_squared());
    let mut mode = match draw {
        ModeDraw::Path { initial, .. } => pick(initial, rng.random()),
        ModeDraw::Marginal(_) => 0,
    };
    for k in 1..=cfg.k_max {
        mode = match draw {
            ModeDraw::Marginal(schedule) => pick(&schedule[k - 1], rng.random()),
            ModeDraw::Path { rows, .. } => pick(&rows[mode], rng.random()),
        };
        x = sys.mode(mode).as_dmatrix() * &x;
        acc[k].push(x.norm_squared());
    }
}
