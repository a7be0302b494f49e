//! Dense real linear algebra used throughout the crate.
//!
//! [`Matrix`] is a thin validated wrapper over `nalgebra::DMatrix<f64>`:
//! it is never empty and every entry is finite when built through a public
//! constructor. Kernels that can legitimately produce huge values (moment
//! recursions on unstable systems) check magnitudes themselves.
//!
//! `vec` stacks columns, so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Slack for symmetry and PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// Relative accuracy targeted by [`spectral_radius`] on well-conditioned inputs.
pub const EIGEN_REL_TOL: f64 = 1e-9;

const SCHUR_MIN_ITERS: usize = 10_000;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    inner: DMatrix<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if row_major.len() != rows * cols {
            return Err(Error::EntryCount {
                rows,
                cols,
                expected: rows * cols,
                got: row_major.len(),
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, row_major))
    }

    /// Builds a matrix from nested rows, rejecting ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || ncols == 0 {
            return Err(Error::EmptyMatrix {
                rows: rows.len(),
                cols: ncols,
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::RaggedRows {
                    row: i,
                    expected: ncols,
                    got: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), ncols, &flat)
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyMatrix {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if let Some((idx, _)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            return Err(Error::NonFinite {
                row: idx % m.nrows(),
                col: idx / m.nrows(),
            });
        }
        Ok(Self { inner: m })
    }

    /// Wraps an internally computed result without re-validating it.
    pub(crate) fn wrap(m: DMatrix<f64>) -> Self {
        debug_assert!(m.nrows() > 0 && m.ncols() > 0);
        Self { inner: m }
    }

    pub fn identity(n: usize) -> Self {
        Self::wrap(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::wrap(DMatrix::zeros(rows, cols))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        Self::from_dmatrix(m)
    }

    /// A column vector.
    pub fn column(entries: &[f64]) -> Result<Self> {
        Self::new(entries.len(), 1, entries)
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner[(row, col)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::wrap(self.inner.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.amax()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::wrap(&self.inner * s)
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(&self) -> Self {
        Self::wrap((&self.inner + self.inner.transpose()) * 0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        (self.inner.shape() == other.inner.shape()).then(|| (&self.inner - &other.inner).amax())
    }

    pub fn approx_eq(&self, other: &Matrix, tol: f64) -> bool {
        self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }

    fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows())
        } else {
            Err(Error::NotSquare {
                rows: self.rows(),
                cols: self.cols(),
            })
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows())
            .field("cols", &self.cols())
            .field("entries", &self.to_rows())
            .finish()
    }
}

impl<'a> Mul<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &'a Matrix) -> Matrix {
        Matrix::wrap(&self.inner * &rhs.inner)
    }
}

impl<'a> Add<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn add(self, rhs: &'a Matrix) -> Matrix {
        Matrix::wrap(&self.inner + &rhs.inner)
    }
}

impl<'a> Sub<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &'a Matrix) -> Matrix {
        Matrix::wrap(&self.inner - &rhs.inner)
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::wrap(a.inner.kronecker(&b.inner))
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Matrix {
    // nalgebra stores column-major, so the raw storage order is already vec(m)
    Matrix::wrap(DMatrix::from_column_slice(
        m.rows() * m.cols(),
        1,
        m.inner.as_slice(),
    ))
}

/// Inverse of [`vec`].
pub fn unvec(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if v.cols() != 1 || v.rows() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {}x{} into {rows}x{cols}",
            v.rows(),
            v.cols()
        )));
    }
    Ok(Matrix::wrap(DMatrix::from_column_slice(
        rows,
        cols,
        v.inner.as_slice(),
    )))
}

/// All eigenvalues of a square matrix via a real Schur decomposition.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    let n = m.require_square()?;
    if !m.is_finite() {
        return Err(Error::EigenFailure { n });
    }
    if n == 1 {
        return Ok(vec![Complex::new(m.get(0, 0), 0.0)]);
    }
    let max_iter = SCHUR_MIN_ITERS.max(100 * n);
    let schur =
        Schur::try_new(m.inner.clone(), f64::EPSILON, max_iter).ok_or(Error::EigenFailure { n })?;
    let eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenFailure { n });
    }
    Ok(eig)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.cols() == 1 || m.rows() == 1 {
        return m.frobenius_norm();
    }
    SVD::new(m.inner.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// The `nm x nm` matrix whose `(i, j)` block is `blocks[i]` for every `j`.
///
/// Its nonzero spectrum coincides with that of `Σ blocks[i]`.
pub fn block_replicate(blocks: &[Matrix]) -> Result<Matrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Dimension("no blocks to replicate".into()))?;
    let n = first.require_square()?;
    for (i, b) in blocks.iter().enumerate() {
        if b.rows() != n || b.cols() != n {
            return Err(Error::Dimension(format!(
                "block {i} is {}x{}, expected {n}x{n}",
                b.rows(),
                b.cols()
            )));
        }
    }
    let m = blocks.len();
    let mut out = DMatrix::zeros(n * m, n * m);
    for (i, b) in blocks.iter().enumerate() {
        for j in 0..m {
            out.view_mut((i * n, j * n), (n, n)).copy_from(&b.inner);
        }
    }
    Ok(Matrix::wrap(out))
}

fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.rows();
    let max_iter = SCHUR_MIN_ITERS.max(100 * n);
    SymmetricEigen::try_new(m.inner.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::EigenFailure { n })
}

/// Symmetrizes `m` and clamps eigenvalues in `[-tol, 0)` to zero.
///
/// The tolerance is scaled by `max(1, ‖m‖_max)`. Eigenvalues below `-tol`
/// are reported as [`Error::NotPsd`].
pub fn psd_project(m: &Matrix, tol: f64) -> Result<Matrix> {
    m.require_square()?;
    let sym = m.symmetrize();
    let scaled_tol = tol * sym.max_abs().max(1.0);
    let eig = symmetric_eigen(&sym)?;
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -scaled_tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tol: scaled_tol,
        });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok(Matrix::wrap(rebuilt).symmetrize())
}

/// Symmetric PSD square root with the default tolerance.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix> {
    sqrtm_psd_with_tol(m, PSD_TOL)
}

pub fn sqrtm_psd_with_tol(m: &Matrix, tol: f64) -> Result<Matrix> {
    m.require_square()?;
    let asym = m.max_abs_diff(&m.transpose()).unwrap_or(0.0);
    if asym > tol * m.max_abs().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: f64::NAN,
            tol,
        });
    }
    let sym = m.symmetrize();
    let scaled_tol = tol * sym.max_abs().max(1.0);
    let eig = symmetric_eigen(&sym)?;
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -scaled_tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tol: scaled_tol,
        });
    }
    // eigenvalues at roundoff level are treated as exact zeros
    let top = eig.eigenvalues.amax();
    let floor = f64::EPSILON * sym.rows() as f64 * top;
    let roots = eig
        .eigenvalues
        .map(|l| if l <= floor { 0.0 } else { l.sqrt() });
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(Matrix::wrap(root).symmetrize())
}
