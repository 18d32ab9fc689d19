//! Dense symmetric and Hermitian matrix kernel.
//!
//! Every exponentiated matrix in this crate is either real symmetric or a
//! complex scalar multiple of a real symmetric matrix, so exponentials are
//! computed spectrally from a real symmetric eigendecomposition.

use nalgebra::{ComplexField, DMatrix, DVector, Scalar, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul};
use thiserror::Error;

use crate::C64;

/// Dense complex matrix without structural guarantees.
pub type CMatrix = DMatrix<C64>;

/// Largest argument accepted by `f64::exp` without overflowing.
pub const EXP_ARG_LIMIT: f64 = 709.782_712_893_384;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix exponential overflows: exponent {exponent} exceeds {limit}")]
    Overflow { exponent: f64, limit: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, MatError>;

fn check_finite<T: ComplexField>(m: &DMatrix<T>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MatError::InvalidInput("matrix has non-finite entries".into()))
    }
}

fn check_square<T: Scalar>(m: &DMatrix<T>) -> Result<usize> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(MatError::InvalidInput(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

/// Real symmetric `d x d` matrix. Symmetry is exact: the stored entries
/// satisfy `a[(i, j)] == a[(j, i)]` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymmetricMatrix(DMatrix<f64>);

impl TryFrom<DMatrix<f64>> for SymmetricMatrix {
    type Error = MatError;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SymmetricMatrix> for DMatrix<f64> {
    fn from(s: SymmetricMatrix) -> Self {
        s.0
    }
}

impl SymmetricMatrix {
    /// Validates and exactly symmetrizes `m`. Asymmetry above `1e-12`
    /// relative to the largest entry is an error.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let d = check_square(&m)?;
        check_finite(&m)?;
        let scale = m.amax().max(1.0);
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if worst > SYMMETRY_TOL * scale {
            return Err(MatError::NotSymmetric(worst));
        }
        Ok(Self::symmetrize(m))
    }

    /// Takes `(m + m^T) / 2`. Infallible apart from shape.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymmetricMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(MatError::InvalidInput("rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(d, d))
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        SymmetricMatrix(DMatrix::identity(d, d) * c)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect()).collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        SymmetricMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(MatError::DimensionMismatch(format!("{} vs {}", self.dim(), other.dim())));
        }
        Ok(SymmetricMatrix(&self.0 + &other.0))
    }

    /// `S^2`, re-symmetrized to remove rounding asymmetry.
    pub fn square(&self) -> Self {
        Self::symmetrize(&self.0 * &self.0)
    }

    pub fn eig(&self) -> Result<SymEig> {
        sym_eig(self)
    }

    pub fn lambda_max(&self) -> f64 {
        lambda_max(self)
    }

    pub fn lambda_min(&self) -> f64 {
        sym_eig_unchecked(self).eigenvalues[self.dim() - 1]
    }

    /// Operator norm `max |lambda_i|`.
    pub fn spectral_norm(&self) -> f64 {
        let e = sym_eig_unchecked(self);
        e.eigenvalues[0].abs().max(e.eigenvalues[self.dim() - 1].abs())
    }

    /// Applies a real scalar function spectrally: `V f(Lambda) V^T`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        let e = sym_eig_unchecked(self);
        e.reconstruct_with(f)
    }

    pub fn exp_scaled(&self, scale: f64) -> Result<Self> {
        matrix_exp_sym(self, scale)
    }

    /// `exp(z S)` for a complex scalar `z`, via the real eigendecomposition.
    pub fn exp_complex(&self, z: C64) -> Result<CMatrix> {
        let e = sym_eig_unchecked(self);
        let mut worst = f64::NEG_INFINITY;
        for &l in e.eigenvalues.iter() {
            worst = worst.max(z.re * l);
        }
        if worst > EXP_ARG_LIMIT {
            return Err(MatError::Overflow { exponent: worst, limit: EXP_ARG_LIMIT });
        }
        let v = e.eigenvectors.map(|x| C64::new(x, 0.0));
        let diag = DVector::from_iterator(e.eigenvalues.len(), e.eigenvalues.iter().map(|&l| (z * l).exp()));
        Ok(&v * DMatrix::from_diagonal(&diag) * v.transpose())
    }

    pub fn to_complex(&self) -> CMatrix {
        self.0.map(|x| C64::new(x, 0.0))
    }
}

/// Complex Hermitian `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let d = check_square(&m)?;
        check_finite(&m)?;
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        if worst > SYMMETRY_TOL * scale {
            return Err(MatError::NotHermitian(worst));
        }
        let adj = m.adjoint();
        Ok(HermitianMatrix((m + adj) * C64::new(0.5, 0.0)))
    }

    /// Builds `X + iY` from real and imaginary parts.
    pub fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(MatError::DimensionMismatch("real and imaginary parts differ in shape".into()));
        }
        Self::new(re.zip_map(im, C64::new))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order and orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let v = &self.eigenvectors;
        let diag = self.eigenvalues.map(f);
        SymmetricMatrix::symmetrize(v * DMatrix::from_diagonal(&diag) * v.transpose())
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.reconstruct_with(|l| l)
    }
}

fn sym_eig_unchecked(s: &SymmetricMatrix) -> SymEig {
    let d = s.dim();
    if d == 1 {
        return SymEig { eigenvalues: DVector::from_element(1, s.0[(0, 0)]), eigenvectors: DMatrix::identity(1, 1) };
    }
    let raw = SymmetricEigen::new(s.0.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| raw.eigenvalues[k]));
    let eigenvectors = DMatrix::from_fn(d, d, |i, j| raw.eigenvectors[(i, order[j])]);
    SymEig { eigenvalues, eigenvectors }
}

/// Symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig(s: &SymmetricMatrix) -> Result<SymEig> {
    check_finite(&s.0)?;
    Ok(sym_eig_unchecked(s))
}

/// `exp(scale * S)` as `V diag(exp(scale * lambda_i)) V^T`.
pub fn matrix_exp_sym(s: &SymmetricMatrix, scale: f64) -> Result<SymmetricMatrix> {
    if !scale.is_finite() {
        return Err(MatError::InvalidInput(format!("non-finite scale {scale}")));
    }
    let e = sym_eig(s)?;
    let worst = e.eigenvalues.iter().map(|&l| scale * l).fold(f64::NEG_INFINITY, f64::max);
    if worst > EXP_ARG_LIMIT {
        return Err(MatError::Overflow { exponent: worst, limit: EXP_ARG_LIMIT });
    }
    Ok(e.reconstruct_with(|l| (scale * l).exp()))
}

/// Kronecker product. For `A` of size `a x b` and `B` of size `c x d`
/// the result is `ac x bd` with block `(i, j)` equal to `A[i, j] * B`.
pub fn kron<T>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T>
where
    T: Scalar + Copy + Mul<Output = T>,
{
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Column-major flattening. Satisfies `kron(B^T, A) vec(X) == vec(A X B)`.
pub fn vec<T: Scalar + Copy>(x: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec<T: Scalar + Copy>(v: &DVector<T>, rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// `tr[AB]`.
pub fn trace_pairing<T>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<T>
where
    T: Scalar + Copy + Mul<Output = T> + Add<Output = T> + num_zero::Zero,
{
    if a.nrows() != a.ncols() || a.shape() != b.shape() {
        return Err(MatError::DimensionMismatch(format!(
            "trace pairing needs equal square shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.nrows();
    let mut acc = T::zero();
    for i in 0..d {
        for j in 0..d {
            acc = acc + a[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc)
}

mod num_zero {
    pub trait Zero {
        fn zero() -> Self;
    }
    impl Zero for f64 {
        fn zero() -> Self {
            0.0
        }
    }
    impl Zero for crate::C64 {
        fn zero() -> Self {
            crate::C64::new(0.0, 0.0)
        }
    }
}

pub fn lambda_max(s: &SymmetricMatrix) -> f64 {
    sym_eig_unchecked(s).eigenvalues[0]
}

/// Real embedding `[[X, Y], [-Y, X]]` of `Z = X + iY`. Every eigenvalue of
/// `Z` appears twice in the embedding.
pub fn embed_complex(z: &HermitianMatrix) -> SymmetricMatrix {
    let d = z.dim();
    let m = z.as_matrix();
    let out = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let (bi, bj) = (i / d, j / d);
        let e = m[(i % d, j % d)];
        match (bi, bj) {
            (0, 0) | (1, 1) => e.re,
            (0, 1) => e.im,
            _ => -e.im,
        }
    });
    SymmetricMatrix::symmetrize(out)
}

/// `sum |a_ij|^2`.
pub fn frob_norm_sq<T: ComplexField>(a: &DMatrix<T>) -> f64
where
    T::RealField: Into<f64>,
{
    a.iter().map(|x| x.clone().modulus_squared().into()).sum()
}
