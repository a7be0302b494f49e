//! Test-only oracles and random instance generators. Nothing here calls the
//! crate's eigen or Kronecker routines.
#![allow(dead_code)]

use jumpstab::{GaussianComponent, GaussianMixture, JumpLinearSystem, Matrix};
use nalgebra::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let v: Vec<f64> = (0..rows * cols).map(|_| gauss(rng)).collect();
    Matrix::new(rows, cols, &v).unwrap()
}

/// `G Gᵀ` with a random `n x rank` factor.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Matrix {
    let g = random_matrix(rng, n, rank.max(1));
    &g * &g.transpose()
}

pub fn random_probability(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m).map(|_| random_probability(rng, m)).collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn random_system(rng: &mut ChaCha8Rng, m: usize, n: usize, scale: f64) -> JumpLinearSystem {
    let modes = (0..m)
        .map(|_| random_matrix(rng, n, n).scale(scale / (n as f64).sqrt()))
        .collect();
    JumpLinearSystem::new(modes).unwrap()
}

pub fn random_mixture(rng: &mut ChaCha8Rng, n: usize, q: usize) -> GaussianMixture {
    let w = random_probability(rng, q);
    GaussianMixture::new(
        w.into_iter()
            .map(|weight| {
                let mean: Vec<f64> = (0..n).map(|_| gauss(rng)).collect();
                let rank = 1 + rng.random_range(0..n);
                GaussianComponent::new(weight, &mean, random_psd(rng, n, rank).scale(0.5))
            })
            .collect(),
    )
}

pub fn scalar_system(a: &[f64]) -> JumpLinearSystem {
    JumpLinearSystem::new(
        a.iter()
            .map(|&v| Matrix::new(1, 1, &[v]).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Plain triple-loop product.
pub fn naive_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = vec![0.0; a.rows() * b.cols()];
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for t in 0..a.cols() {
                s += a.get(i, t) * b.get(t, j);
            }
            out[i * b.cols() + j] = s;
        }
    }
    Matrix::new(a.rows(), b.cols(), &out).unwrap()
}

/// Kronecker product from its index definition.
pub fn naive_kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = (b.rows(), b.cols());
    let rows = a.rows() * p;
    let cols = a.cols() * q;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = a.get(i / p, j / q) * b.get(i % p, j % q);
        }
    }
    Matrix::new(rows, cols, &out).unwrap()
}

/// Characteristic polynomial coefficients `c_0..c_n` of `det(λI − A)`
/// (monic, `c_n = 1`) by Faddeev–LeVerrier.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut mk = Matrix::zeros(n, n);
    for k in 1..=n {
        let mut next = naive_mul(a, &mk);
        let c = coeffs[n - k + 1];
        let mut v = next.to_rows();
        for (i, row) in v.iter_mut().enumerate() {
            row[i] += c;
        }
        next = Matrix::from_rows(&v).unwrap();
        mk = next;
        let amk = naive_mul(a, &mk);
        coeffs[n - k] = -amk.trace() / k as f64;
    }
    coeffs
}

/// Roots of a monic polynomial by Durand–Kerner iteration.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let n = coeffs.len() - 1;
    let eval = |z: Complex<f64>| {
        coeffs
            .iter()
            .rev()
            .fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    let bound = 1.0 + coeffs[..n].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..n).map(|i| seed.powu(i as u32) * bound * 0.5).collect();
    for _ in 0..5000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex::new(1e-12, 0.0);
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * bound {
            break;
        }
    }
    // Newton polish
    let deriv: Vec<f64> = (1..=n).map(|k| coeffs[k] * k as f64).collect();
    let eval_d = |z: Complex<f64>| {
        deriv
            .iter()
            .rev()
            .fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    for r in &mut roots {
        for _ in 0..3 {
            let d = eval_d(*r);
            if d.norm() > 1e-14 {
                *r -= eval(*r) / d;
            }
        }
    }
    roots
}

/// Spectral radius via characteristic polynomial roots. Suitable up to ~6x6.
pub fn oracle_spectral_radius(a: &Matrix) -> f64 {
    poly_roots(&char_poly(a))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Greedy nearest matching of two eigenvalue multisets; returns the worst
/// distance. Lengths must agree.
pub fn spectrum_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| b_norm(&a[j]).total_cmp(&b_norm(&a[i])));
    let mut worst = 0.0f64;
    for i in order {
        let (best, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, z)| (j, (a[i] - z).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[best] = true;
        worst = worst.max(d);
    }
    worst
}

fn b_norm(z: &Complex<f64>) -> f64 {
    z.norm()
}

/// Drops the `count` smallest-modulus eigenvalues.
pub fn drop_smallest(mut eig: Vec<Complex<f64>>, count: usize) -> Vec<Complex<f64>> {
    eig.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    eig.split_off(count)
}

/// Numerical rank from singular values (test oracle, uses `AᵀA` eigen-free
/// Gram–Schmidt with pivoting).
pub fn rank(a: &Matrix, tol: f64) -> usize {
    let mut cols: Vec<Vec<f64>> = (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a.get(i, j)).collect())
        .collect();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    loop {
        // pick the remaining column with the largest residual norm
        let (idx, norm) = cols
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold(
                (usize::MAX, 0.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if idx == usize::MAX || norm <= tol * scale {
            return basis.len();
        }
        let q: Vec<f64> = cols[idx].iter().map(|v| v / norm).collect();
        cols.remove(idx);
        for c in &mut cols {
            let d: f64 = c.iter().zip(&q).map(|(x, y)| x * y).sum();
            c.iter_mut().zip(&q).for_each(|(x, y)| *x -= d * y);
        }
        basis.push(q);
    }
}
