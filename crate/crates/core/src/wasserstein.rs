//! Closed-form order-2 Wasserstein distances against Gaussians and the Dirac
//! mass at the origin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matkit::{self, Matrix, PSD_TOL};
use crate::sysmodel::GaussianMixture;

fn check_pair(mean: &[f64], cov: &Matrix) -> Result<()> {
    if cov.rows() != mean.len() || cov.cols() != mean.len() {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    Ok(())
}

/// `W(N(μ, Σ), δ) = sqrt(‖μ‖² + tr Σ)`.
pub fn gaussian_to_dirac(mean: &[f64], cov: &Matrix) -> Result<f64> {
    check_pair(mean, cov)?;
    matkit::psd_project(cov, PSD_TOL)?;
    Ok(gaussian_to_dirac_sq_unchecked(mean, cov).sqrt())
}

fn gaussian_to_dirac_sq_unchecked(mean: &[f64], cov: &Matrix) -> f64 {
    mean.iter().map(|v| v * v).sum::<f64>() + cov.trace()
}

/// Squared distance between two Gaussians:
/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (√Σ1 Σ2 √Σ1)^{1/2})`.
pub fn gaussian_to_gaussian_sq(
    mean1: &[f64],
    cov1: &Matrix,
    mean2: &[f64],
    cov2: &Matrix,
) -> Result<f64> {
    check_pair(mean1, cov1)?;
    check_pair(mean2, cov2)?;
    if mean1.len() != mean2.len() {
        return Err(Error::Dimension(format!(
            "gaussians of dimension {} and {}",
            mean1.len(),
            mean2.len()
        )));
    }
    let c1 = matkit::psd_project(cov1, PSD_TOL)?;
    let c2 = matkit::psd_project(cov2, PSD_TOL)?;
    let root1 = matkit::sqrtm_psd(&c1)?;
    let inner = (&(&root1 * &c2) * &root1).symmetrize();
    let cross = matkit::sqrtm_psd(&matkit::psd_project(&inner, PSD_TOL)?)?;
    let mean_sq: f64 = mean1
        .iter()
        .zip(mean2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let bures = c1.trace() + c2.trace() - 2.0 * cross.trace();
    // cancellation can leave a tiny negative residue for identical inputs
    Ok((mean_sq + bures).max(0.0))
}

pub fn gaussian_to_gaussian(
    mean1: &[f64],
    cov1: &Matrix,
    mean2: &[f64],
    cov2: &Matrix,
) -> Result<f64> {
    gaussian_to_gaussian_sq(mean1, cov1, mean2, cov2).map(f64::sqrt)
}

/// `Σ_j α_j (‖μ_j‖² + tr Σ_j)`: the squared distance from a mixture to δ.
pub fn mixture_to_dirac_sq(mix: &GaussianMixture) -> Result<f64> {
    mix.check()?;
    Ok(mix
        .components
        .iter()
        .map(|c| c.weight * (c.mean.norm_squared() + c.cov.trace()))
        .sum())
}

/// Mean and covariance of a mixture (its moment-matched Gaussian).
pub fn synthetic_gaussian(mix: &GaussianMixture) -> Result<(Vec<f64>, Matrix)> {
    mix.check()?;
    let n = mix.dim();
    let mean = mix
        .components
        .iter()
        .fold(DVector::zeros(n), |acc, c| acc + &c.mean * c.weight);
    let mut cov = DMatrix::zeros(n, n);
    for c in &mix.components {
        let d = &c.mean - &mean;
        cov += (c.cov.as_dmatrix() + &d * d.transpose()) * c.weight;
    }
    let cov = Matrix::wrap(cov).symmetrize();
    Ok((mean.iter().copied().collect(), cov))
}
