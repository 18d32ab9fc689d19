//! Operators on the lifted space `l2(pi (x) 1)` of functions from states to
//! `C^{d^2}`, stored as dense `(m d^2) x (m d^2)` matrices.
//!
//! Index `x * d^2 + k` addresses component `k` of the value at state `x`, so
//! a kernel lifts as `P (x) I_{d^2}` and multiplication operators are block
//! diagonal. The `pi`-weighted inner product is
//! `<g, h>_pi = sum_x pi_x <g(x), h(x)>`.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds;
use crate::chain::{ChainError, FiniteChain};
use crate::matcore::{kron, vec, CMatrix, MatError, SymmetricMatrix, EXP_ARG_LIMIT};
use crate::C64;

/// Default cap on `m * d^2`, the side length of a lifted operator.
pub const DEFAULT_LIFT_CAP: usize = 4096;
/// Largest tolerated `|Im| / |Re|` of an evaluated MGF.
pub const IMAG_TOL: f64 = 1e-10;
/// Tolerance used when checking declared ranges and mean-zero conditions.
pub const OBSERVABLE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("lifted dimension m*d^2 = {size} exceeds the cap {cap}; reduce the number of states or the matrix dimension")]
    CapExceeded { size: usize, cap: usize },
    #[error("imaginary residual {residual:e} of the evaluated MGF exceeds {IMAG_TOL:e}")]
    ImaginaryResidual { residual: f64 },
    #[error("value overflows f64: log value {log_value}")]
    Overflow { log_value: f64 },
    #[error("invalid observable: {0}")]
    InvalidObservable(String),
    #[error("root bracket failed: {0}")]
    NoBracket(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LiftError>;

/// Per-state matrices, either shared by all times or given per time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ObservableMaps {
    TimeIndependent(Vec<SymmetricMatrix>),
    /// Indexed `[j][x]`.
    TimeDependent(Vec<Vec<SymmetricMatrix>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinProxies {
    pub variances: Vec<f64>,
    pub m_bound: f64,
}

/// The sequence `F_1, .., F_n` of maps from states to `d x d` symmetric
/// matrices, with optional declared Hoeffding ranges or Bernstein proxies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSequence {
    d: usize,
    n: usize,
    m: usize,
    maps: ObservableMaps,
    hoeffding: Option<Vec<(f64, f64)>>,
    bernstein: Option<BernsteinProxies>,
}

fn check_family(family: &[SymmetricMatrix], d: Option<usize>) -> Result<usize> {
    let first = family.first().ok_or_else(|| LiftError::InvalidObservable("no states given".into()))?;
    let d = d.unwrap_or(first.dim());
    if family.iter().any(|f| f.dim() != d) {
        return Err(LiftError::InvalidObservable("matrices of differing dimension".into()));
    }
    Ok(d)
}

impl ObservableSequence {
    pub fn time_independent(maps: Vec<SymmetricMatrix>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LiftError::InvalidObservable("horizon must be at least 1".into()));
        }
        let d = check_family(&maps, None)?;
        Ok(ObservableSequence {
            d,
            n,
            m: maps.len(),
            maps: ObservableMaps::TimeIndependent(maps),
            hoeffding: None,
            bernstein: None,
        })
    }

    pub fn time_dependent(maps: Vec<Vec<SymmetricMatrix>>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| LiftError::InvalidObservable("horizon must be at least 1".into()))?;
        let m = first.len();
        let d = check_family(first, None)?;
        for fam in &maps {
            if fam.len() != m {
                return Err(LiftError::InvalidObservable("every time step must assign a matrix to every state".into()));
            }
            check_family(fam, Some(d))?;
        }
        Ok(ObservableSequence {
            d,
            n: maps.len(),
            m,
            maps: ObservableMaps::TimeDependent(maps),
            hoeffding: None,
            bernstein: None,
        })
    }

    /// `F(x) = f(x) I_d`.
    pub fn scalar(f: &[f64], d: usize, n: usize) -> Result<Self> {
        Self::time_independent(f.iter().map(|&v| SymmetricMatrix::scaled_identity(d, v)).collect(), n)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn maps(&self) -> &ObservableMaps {
        &self.maps
    }

    pub fn is_time_independent(&self) -> bool {
        matches!(self.maps, ObservableMaps::TimeIndependent(_))
    }

    /// `F_j(x)` with `j` zero-based.
    pub fn at(&self, j: usize, x: usize) -> &SymmetricMatrix {
        match &self.maps {
            ObservableMaps::TimeIndependent(f) => &f[x],
            ObservableMaps::TimeDependent(f) => &f[j][x],
        }
    }

    /// The state map at time `j`.
    pub fn family(&self, j: usize) -> &[SymmetricMatrix] {
        match &self.maps {
            ObservableMaps::TimeIndependent(f) => f,
            ObservableMaps::TimeDependent(f) => &f[j],
        }
    }

    pub fn hoeffding_ranges(&self) -> Option<&[(f64, f64)]> {
        self.hoeffding.as_deref()
    }

    pub fn bernstein_proxies(&self) -> Option<&BernsteinProxies> {
        self.bernstein.as_ref()
    }

    fn check_states(&self, pi: &[f64]) -> Result<()> {
        if pi.len() != self.m {
            return Err(LiftError::InvalidObservable(format!("observable has {} states, distribution has {}", self.m, pi.len())));
        }
        Ok(())
    }

    /// Largest entry of `E_pi[F_j]` over all `j`.
    pub fn mean_deviation(&self, pi: &[f64]) -> Result<f64> {
        self.check_states(pi)?;
        Ok((0..self.n).map(|j| pi_mean(self.family(j), pi).amax()).fold(0.0, f64::max))
    }

    fn entry_scale(&self) -> f64 {
        (0..self.n).flat_map(|j| self.family(j).iter().map(|f| f.as_matrix().amax())).fold(1.0, f64::max)
    }

    fn check_mean_zero(&self, pi: &[f64]) -> Result<()> {
        let dev = self.mean_deviation(pi)?;
        if dev > OBSERVABLE_TOL * self.entry_scale() {
            return Err(LiftError::InvalidObservable(format!("E_pi[F_j] is not zero (max entry {dev:e})")));
        }
        Ok(())
    }

    /// Attaches ranges `a_j I <= F_j(x) <= b_j I`, verified by an eigenvalue
    /// scan, together with the mean-zero condition. A single range is
    /// broadcast over all times.
    pub fn with_hoeffding(mut self, ranges: Vec<(f64, f64)>, pi: &[f64]) -> Result<Self> {
        let ranges = if ranges.len() == 1 { vec![ranges[0]; self.n] } else { ranges };
        if ranges.len() != self.n {
            return Err(LiftError::InvalidObservable(format!("{} ranges for horizon {}", ranges.len(), self.n)));
        }
        self.check_mean_zero(pi)?;
        for (j, &(a, b)) in ranges.iter().enumerate() {
            if !(a <= 0.0 && 0.0 <= b && a < b) {
                return Err(LiftError::InvalidObservable(format!(
                    "range ({a}, {b}) at time {j} must satisfy a <= 0 <= b, a < b"
                )));
            }
            let tol = OBSERVABLE_TOL * a.abs().max(b.abs()).max(1.0);
            for (x, f) in self.family(j).iter().enumerate() {
                let e = f.eig()?;
                let (hi, lo) = (e.eigenvalues[0], e.eigenvalues[self.d - 1]);
                if lo < a - tol || hi > b + tol {
                    return Err(LiftError::InvalidObservable(format!(
                        "F_{j}({x}) has spectrum [{lo}, {hi}] outside the declared range [{a}, {b}]"
                    )));
                }
            }
        }
        self.hoeffding = Some(ranges);
        Ok(self)
    }

    /// Attaches variance proxies `||E_pi[F_j^2]|| <= V_j` and the uniform
    /// bound `||F_j(x)|| <= M`, verified along with the mean-zero condition.
    pub fn with_bernstein(mut self, variances: Vec<f64>, m_bound: f64, pi: &[f64]) -> Result<Self> {
        let variances = if variances.len() == 1 { vec![variances[0]; self.n] } else { variances };
        if variances.len() != self.n {
            return Err(LiftError::InvalidObservable(format!("{} variances for horizon {}", variances.len(), self.n)));
        }
        if !(m_bound > 0.0) || !m_bound.is_finite() {
            return Err(LiftError::InvalidObservable(format!("uniform bound M = {m_bound} must be positive")));
        }
        self.check_mean_zero(pi)?;
        let tol = OBSERVABLE_TOL * m_bound.max(1.0);
        for (j, &v) in variances.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(LiftError::InvalidObservable(format!("variance proxy V_{j} = {v} is negative")));
            }
            let fam = self.family(j);
            for (x, f) in fam.iter().enumerate() {
                let norm = f.spectral_norm();
                if norm > m_bound + tol {
                    return Err(LiftError::InvalidObservable(format!("||F_{j}({x})|| = {norm} exceeds M = {m_bound}")));
                }
            }
            let var = second_moment(fam, pi).spectral_norm();
            if var > v + OBSERVABLE_TOL * v.max(1.0) {
                return Err(LiftError::InvalidObservable(format!("||E[F_{j}^2]|| = {var} exceeds V_{j} = {v}")));
            }
        }
        self.bernstein = Some(BernsteinProxies { variances, m_bound });
        Ok(self)
    }

    /// Tightest ranges `(min_x lambda_min, max_x lambda_max)` per time step,
    /// widened to contain 0.
    pub fn tight_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.n)
            .map(|j| {
                self.family(j).iter().fold((0.0_f64, 0.0_f64), |(a, b), f| {
                    let e = f.eig().expect("validated matrices are finite");
                    (a.min(e.eigenvalues[self.d - 1]), b.max(e.eigenvalues[0]))
                })
            })
            .collect()
    }

    /// Tightest proxies `V_j = ||E_pi[F_j^2]||` and `M = max ||F_j(x)||`.
    pub fn tight_bernstein(&self, pi: &[f64]) -> Result<BernsteinProxies> {
        self.check_states(pi)?;
        let variances = (0..self.n).map(|j| second_moment(self.family(j), pi).spectral_norm()).collect();
        let m_bound = (0..self.n).flat_map(|j| self.family(j).iter().map(|f| f.spectral_norm())).fold(0.0, f64::max);
        Ok(BernsteinProxies { variances, m_bound })
    }

    /// `-F`, used for lower-tail queries. Declared ranges flip to `(-b, -a)`.
    pub fn negated(&self) -> Self {
        let neg = |fam: &Vec<SymmetricMatrix>| fam.iter().map(|f| f.scale(-1.0)).collect::<Vec<_>>();
        let maps = match &self.maps {
            ObservableMaps::TimeIndependent(f) => ObservableMaps::TimeIndependent(neg(f)),
            ObservableMaps::TimeDependent(f) => ObservableMaps::TimeDependent(f.iter().map(neg).collect()),
        };
        ObservableSequence {
            maps,
            hoeffding: self.hoeffding.as_ref().map(|r| r.iter().map(|&(a, b)| (-b, -a)).collect()),
            ..self.clone()
        }
    }

    /// Real embedding of a complex observable given by real and imaginary
    /// parts per state; see [`crate::matcore::embed_complex`].
    pub fn embed_complex(re: &[SymmetricMatrix], im: &[DMatrix<f64>], n: usize) -> Result<Self> {
        if re.len() != im.len() {
            return Err(LiftError::InvalidObservable("real and imaginary parts list different numbers of states".into()));
        }
        let maps = re
            .iter()
            .zip(im)
            .map(|(x, y)| {
                let z = crate::matcore::HermitianMatrix::from_parts(x.as_matrix(), y)?;
                Ok(crate::matcore::embed_complex(&z))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::time_independent(maps, n)
    }
}

/// `sum_x pi_x F(x)`.
pub fn pi_mean(family: &[SymmetricMatrix], pi: &[f64]) -> DMatrix<f64> {
    let d = family[0].dim();
    family.iter().zip(pi).fold(DMatrix::zeros(d, d), |acc, (f, &p)| acc + f.as_matrix() * p)
}

/// `sum_x pi_x F(x)^2`.
pub fn second_moment(family: &[SymmetricMatrix], pi: &[f64]) -> SymmetricMatrix {
    let d = family[0].dim();
    let acc = family.iter().zip(pi).fold(DMatrix::zeros(d, d), |acc, (f, &p)| acc + f.square().as_matrix() * p);
    SymmetricMatrix::symmetrize(acc)
}

/// Random symmetric family with `E_pi[F] = 0`, entries of order `scale`.
pub fn random_mean_zero_family<R: Rng>(rng: &mut R, pi: &[f64], d: usize, scale: f64) -> Vec<SymmetricMatrix> {
    let raw: Vec<SymmetricMatrix> =
        pi.iter().map(|_| SymmetricMatrix::symmetrize(DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale)))).collect();
    let mean = pi_mean(&raw, pi);
    raw.into_iter().map(|f| SymmetricMatrix::symmetrize(f.into_inner() - &mean)).collect()
}

/// `H = e^{i phi}/2 F (x) I + e^{-i phi}/2 I (x) F`.
pub fn build_h(f: &SymmetricMatrix, phi: f64) -> CMatrix {
    let d = f.dim();
    let fc = f.to_complex();
    let id = CMatrix::identity(d, d);
    let w = C64::from_polar(0.5, phi);
    kron(&fc, &id) * w + kron(&id, &fc) * w.conj()
}

/// `T = cos(phi)/2 (F (x) I + I (x) F)`.
pub fn build_t(f: &SymmetricMatrix, phi: f64) -> SymmetricMatrix {
    let d = f.dim();
    let id = DMatrix::identity(d, d);
    let t = (kron(f.as_matrix(), &id) + kron(&id, f.as_matrix())) * (phi.cos() / 2.0);
    SymmetricMatrix::symmetrize(t)
}

pub fn build_t_family(family: &[SymmetricMatrix], phi: f64) -> Vec<SymmetricMatrix> {
    family.iter().map(|f| build_t(f, phi)).collect()
}

/// Margins of the three transfer properties from `F` to `T`; a property
/// holds when its margin is nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TPropertiesReport {
    /// `-max |E_pi[T]|_{ij}`, compared against tolerance.
    pub mean_margin: f64,
    /// `min_x lambda_min(T(x)) - a cos(phi)`.
    pub lower_margin: Option<f64>,
    /// `b cos(phi) - max_x lambda_max(T(x))`.
    pub upper_margin: Option<f64>,
    /// `cos^2(phi) V - ||E_pi[T^2]||`.
    pub variance_margin: Option<f64>,
    pub passed: bool,
}

pub fn check_t_properties(
    family: &[SymmetricMatrix],
    pi: &[f64],
    phi: f64,
    range: Option<(f64, f64)>,
    variance: Option<f64>,
) -> TPropertiesReport {
    let ts = build_t_family(family, phi);
    let c = phi.cos();
    let scale = family.iter().map(|f| f.as_matrix().amax()).fold(1.0, f64::max);
    let tol = OBSERVABLE_TOL * scale;
    let mean_margin = -pi_mean(&ts, pi).amax();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in &ts {
        lo = lo.min(t.lambda_min());
        hi = hi.max(t.lambda_max());
    }
    let lower_margin = range.map(|(a, _)| lo - a * c);
    let upper_margin = range.map(|(_, b)| b * c - hi);
    let variance_margin = variance.map(|v| c * c * v - second_moment(&ts, pi).spectral_norm());
    let passed = mean_margin >= -tol && [lower_margin, upper_margin, variance_margin].iter().flatten().all(|&m| m >= -tol);
    TPropertiesReport { mean_margin, lower_margin, upper_margin, variance_margin, passed }
}

/// Dense operator on `l2(pi (x) 1)` with `m` states and block size `d^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedOperator<T: ComplexField = f64> {
    m: usize,
    d: usize,
    mat: DMatrix<T>,
}

fn check_cap(m: usize, d: usize, cap: usize) -> Result<usize> {
    let size = m.saturating_mul(d.saturating_mul(d));
    if size > cap {
        return Err(LiftError::CapExceeded { size, cap });
    }
    Ok(size)
}

impl<T: ComplexField<RealField = f64> + Copy> LiftedOperator<T> {
    pub fn from_matrix(m: usize, d: usize, mat: DMatrix<T>) -> Result<Self> {
        let size = m * d * d;
        if mat.shape() != (size, size) {
            return Err(LiftError::InvalidArgument(format!("expected a {size}x{size} matrix, got {:?}", mat.shape())));
        }
        Ok(LiftedOperator { m, d, mat })
    }

    pub fn identity(m: usize, d: usize) -> Self {
        let size = m * d * d;
        LiftedOperator { m, d, mat: DMatrix::identity(size, size) }
    }

    /// Block-diagonal operator acting on state `x` by `blocks[x]`.
    pub fn block_diagonal(blocks: &[DMatrix<T>], d: usize) -> Result<Self> {
        let b = d * d;
        if blocks.iter().any(|blk| blk.shape() != (b, b)) {
            return Err(LiftError::InvalidArgument(format!("blocks must be {b}x{b}")));
        }
        let m = blocks.len();
        let mut mat = DMatrix::zeros(m * b, m * b);
        for (x, blk) in blocks.iter().enumerate() {
            mat.view_mut((x * b, x * b), (b, b)).copy_from(blk);
        }
        Ok(LiftedOperator { m, d, mat })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.mat
    }

    fn conformable(&self, other: &Self) -> Result<()> {
        if self.m != other.m || self.d != other.d {
            return Err(LiftError::InvalidArgument(format!(
                "operators on (m={}, d={}) and (m={}, d={}) are not conformable",
                self.m, self.d, other.m, other.d
            )));
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.conformable(other)?;
        Ok(LiftedOperator { m: self.m, d: self.d, mat: &self.mat * &other.mat })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.conformable(other)?;
        Ok(LiftedOperator { m: self.m, d: self.d, mat: &self.mat - &other.mat })
    }

    pub fn apply(&self, h: &DVector<T>) -> DVector<T> {
        &self.mat * h
    }

    /// `(D^{1/2} (x) I) L (D^{-1/2} (x) I)`, whose ordinary spectral
    /// quantities are the `pi`-weighted ones of `L`.
    pub fn symmetrized(&self, pi: &[f64]) -> DMatrix<T> {
        let w = lifted_weights(pi, self.d);
        DMatrix::from_fn(self.size(), self.size(), |i, j| self.mat[(i, j)] * T::from_real(w[i] / w[j]))
    }

    /// Adjoint with respect to `<., .>_pi`: `(D (x) I)^{-1} L^H (D (x) I)`.
    pub fn pi_adjoint(&self, pi: &[f64]) -> Self {
        let w = lifted_weights(pi, self.d);
        let adj = self.mat.adjoint();
        let mat = DMatrix::from_fn(self.size(), self.size(), |i, j| adj[(i, j)] * T::from_real(w[j] * w[j] / (w[i] * w[i])));
        LiftedOperator { m: self.m, d: self.d, mat }
    }
}

impl LiftedOperator<f64> {
    pub fn to_complex(&self) -> LiftedOperator<C64> {
        LiftedOperator { m: self.m, d: self.d, mat: self.mat.map(|x| C64::new(x, 0.0)) }
    }
}

/// `sqrt(pi_x)` repeated over each block of `d^2` coordinates.
fn lifted_weights(pi: &[f64], d: usize) -> Vec<f64> {
    pi.iter().flat_map(|&p| std::iter::repeat_n(p.sqrt(), d * d)).collect()
}

/// `<g, h>_pi`.
pub fn pi_inner<T: ComplexField<RealField = f64> + Copy>(pi: &[f64], d: usize, g: &DVector<T>, h: &DVector<T>) -> T {
    let b = d * d;
    let mut acc = T::zero();
    for (i, (gi, hi)) in g.iter().zip(h.iter()).enumerate() {
        acc += gi.conjugate() * *hi * T::from_real(pi[i / b]);
    }
    acc
}

pub fn pi_norm<T: ComplexField<RealField = f64> + Copy>(pi: &[f64], d: usize, h: &DVector<T>) -> f64 {
    pi_inner(pi, d, h, h).real().max(0.0).sqrt()
}

/// `||L||_pi`, the largest singular value of the symmetrized matrix.
pub fn pi_operator_norm<T: ComplexField<RealField = f64> + Copy>(l: &LiftedOperator<T>, pi: &[f64]) -> f64 {
    l.symmetrized(pi).singular_values().max()
}

/// `E P E^*` with the adjoint taken in the `pi` geometry.
pub fn sandwich<T: ComplexField<RealField = f64> + Copy>(
    e: &LiftedOperator<T>,
    p_hat: &LiftedOperator<T>,
    pi: &[f64],
) -> Result<LiftedOperator<T>> {
    e.compose(p_hat)?.compose(&e.pi_adjoint(pi))
}

/// `(P (x) I_{d^2}, 1 pi^T (x) I_{d^2})`.
pub fn lift_kernel(chain: &FiniteChain, d: usize, cap: usize) -> Result<(LiftedOperator, LiftedOperator)> {
    check_cap(chain.m(), d, cap)?;
    let id = DMatrix::identity(d * d, d * d);
    let p = LiftedOperator { m: chain.m(), d, mat: kron(chain.p(), &id) };
    let proj = LiftedOperator { m: chain.m(), d, mat: kron(&chain.pi_projector(), &id) };
    Ok((p, proj))
}

/// `(lambda I + (1 - lambda) 1 pi^T) (x) I_{d^2}`.
pub fn leon_perron_lift(pi: &[f64], lambda: f64, d: usize) -> Result<LiftedOperator> {
    let m = pi.len();
    check_cap(m, d, DEFAULT_LIFT_CAP)?;
    let p = DMatrix::from_fn(m, m, |i, j| if i == j { lambda } else { 0.0 } + (1.0 - lambda) * pi[j]);
    Ok(LiftedOperator { m, d, mat: kron(&p, &DMatrix::identity(d * d, d * d)) })
}

/// `E_T^theta`: block diagonal with blocks `exp(theta T(x))`. The blocks
/// are `d^2 x d^2`, so `d` is recovered from their size.
pub fn mult_operator(t_blocks: &[SymmetricMatrix], theta: f64) -> Result<LiftedOperator> {
    let d = block_d(t_blocks)?;
    let blocks = t_blocks.iter().map(|t| Ok(t.exp_scaled(theta)?.into_inner())).collect::<Result<Vec<_>>>()?;
    LiftedOperator::block_diagonal(&blocks, d)
}

/// Block diagonal with blocks `exp(theta H(x))` built from `F` and `phi`.
pub fn mult_operator_h(family: &[SymmetricMatrix], theta: f64, phi: f64) -> Result<LiftedOperator<C64>> {
    let d = family.first().map(|f| f.dim()).ok_or_else(|| LiftError::InvalidArgument("empty family".into()))?;
    let blocks = family.iter().map(|f| exp_h(f, theta, phi)).collect::<Result<Vec<_>>>()?;
    LiftedOperator::block_diagonal(&blocks, d)
}

fn block_d(t_blocks: &[SymmetricMatrix]) -> Result<usize> {
    let b = t_blocks.first().map(|t| t.dim()).ok_or_else(|| LiftError::InvalidArgument("empty family".into()))?;
    let d = (b as f64).sqrt().round() as usize;
    if d * d != b || t_blocks.iter().any(|t| t.dim() != b) {
        return Err(LiftError::InvalidArgument(format!("block size {b} is not a common square d^2")));
    }
    Ok(d)
}

/// `exp(theta H) = exp(z F) (x) exp(conj(z) F)` with `z = theta e^{i phi} / 2`.
pub fn exp_h(f: &SymmetricMatrix, theta: f64, phi: f64) -> Result<CMatrix> {
    let a = f.exp_complex(C64::from_polar(theta / 2.0, phi))?;
    let a_bar = a.map(|z| z.conj());
    Ok(kron(&a, &a_bar))
}

fn check_chain_obs(chain: &FiniteChain, obs: &ObservableSequence) -> Result<()> {
    if chain.m() != obs.m() {
        return Err(LiftError::InvalidArgument(format!("chain has {} states, observable has {}", chain.m(), obs.m())));
    }
    check_cap(chain.m(), obs.d(), DEFAULT_LIFT_CAP)?;
    Ok(())
}

/// `log E_nu[ ||prod_j exp(theta e^{i phi}/2 F_j(s_j))||_F^2 ]` for a chain
/// started from `nu`, evaluated right to left with the lifted blocks
/// `exp(theta H_j(x))` and rescaled at every step to stay in range.
pub fn exact_log_mgf_from(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64, nu: &[f64]) -> Result<f64> {
    check_chain_obs(chain, obs)?;
    if !theta.is_finite() || !phi.is_finite() {
        return Err(LiftError::InvalidArgument("theta and phi must be finite".into()));
    }
    if nu.len() != chain.m() {
        return Err(LiftError::InvalidArgument("initial distribution has the wrong length".into()));
    }
    let (m, n, d) = (chain.m(), obs.n(), obs.d());
    let vec_i: DVector<C64> = vec(&CMatrix::identity(d, d));
    let blocks_at = |j: usize| -> Result<Vec<CMatrix>> { obs.family(j).iter().map(|f| exp_h(f, theta, phi)).collect() };
    let shared = if obs.is_time_independent() { Some(blocks_at(0)?) } else { None };
    let get = |j: usize| -> Result<std::borrow::Cow<'_, Vec<CMatrix>>> {
        match &shared {
            Some(b) => Ok(std::borrow::Cow::Borrowed(b)),
            None => Ok(std::borrow::Cow::Owned(blocks_at(j)?)),
        }
    };

    let mut log_scale = 0.0;
    let last = get(n - 1)?;
    let mut v: Vec<DVector<C64>> = last.iter().map(|b| b * &vec_i).collect();
    rescale(&mut v, &mut log_scale);
    let p = chain.p();
    for j in (0..n - 1).rev() {
        let blocks = get(j)?;
        let mixed: Vec<DVector<C64>> = (0..m)
            .map(|x| {
                let mut acc = DVector::zeros(d * d);
                for (y, vy) in v.iter().enumerate() {
                    let w = p[(x, y)];
                    if w != 0.0 {
                        acc.axpy(C64::new(w, 0.0), vy, C64::new(1.0, 0.0));
                    }
                }
                acc
            })
            .collect();
        v = blocks.iter().zip(&mixed).map(|(b, u)| b * u).collect();
        rescale(&mut v, &mut log_scale);
    }
    let total: C64 = v.iter().zip(nu).map(|(vx, &w)| vec_i.dot(vx) * w).sum();
    if !(total.re > 0.0) {
        return Err(LiftError::InvalidArgument(format!("MGF evaluated to non-positive {total}")));
    }
    let residual = total.im.abs() / total.re;
    if residual > IMAG_TOL {
        return Err(LiftError::ImaginaryResidual { residual });
    }
    Ok(total.re.ln() + log_scale)
}

fn rescale(v: &mut [DVector<C64>], log_scale: &mut f64) {
    let s = v.iter().flat_map(|x| x.iter()).map(|z| z.norm()).fold(0.0, f64::max);
    if s > 0.0 && s.is_finite() {
        let inv = C64::new(1.0 / s, 0.0);
        v.iter_mut().for_each(|x| *x *= inv);
        *log_scale += s.ln();
    }
}

/// Stationary version of [`exact_log_mgf_from`].
pub fn exact_log_mgf(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64) -> Result<f64> {
    exact_log_mgf_from(chain, obs, theta, phi, chain.pi())
}

/// `E_pi[ ||prod_j exp(theta e^{i phi}/2 F_j(s_j))||_F^2 ]`.
pub fn exact_mgf(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64) -> Result<f64> {
    let l = exact_log_mgf(chain, obs, theta, phi)?;
    if l > EXP_ARG_LIMIT {
        return Err(LiftError::Overflow { log_value: l });
    }
    Ok(l.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Largest eigenvalue `rho` of `E_T^{theta/2} P_hat E_T^{theta/2}`.
    pub leading_eigenvalue: f64,
    /// `lambda * max_x lambda_max(exp(theta T(x)))`.
    pub essential_radius_bound: f64,
    /// Leading eigenfunction, unit norm in `l2(pi (x) 1)`.
    pub eigenfunction: Option<Vec<f64>>,
}

/// `max_x lambda_max(exp(theta T(x)))`.
fn spectral_top(t_blocks: &[SymmetricMatrix], theta: f64) -> f64 {
    t_blocks
        .iter()
        .map(|t| {
            let e = t.eig().expect("validated matrices are finite").eigenvalues;
            (theta * e[0]).max(theta * e[e.len() - 1]).exp()
        })
        .fold(0.0, f64::max)
}

/// Leading eigenpair of the sandwich `E_T^{theta/2} P_hat E_T^{theta/2}`
/// for the Leon-Perron kernel with parameter `lambda`.
pub fn leading_eigenvalue_sandwich(pi: &[f64], lambda: f64, t_blocks: &[SymmetricMatrix], theta: f64) -> Result<SpectralReport> {
    if pi.len() != t_blocks.len() {
        return Err(LiftError::InvalidArgument("one T block per state is required".into()));
    }
    let d = block_d(t_blocks)?;
    let e = mult_operator(t_blocks, theta / 2.0)?;
    let p_hat = leon_perron_lift(pi, lambda, d)?;
    let s = e.compose(&p_hat)?.compose(&e)?;
    let sym = s.symmetrized(pi);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let k = eig.eigenvalues.imax();
    let w = lifted_weights(pi, d);
    let mut h: Vec<f64> = eig.eigenvectors.column(k).iter().zip(&w).map(|(u, w)| u / w).collect();
    // Fix the sign so that the eigenfunction pairs positively with 1 (x) vec(I).
    let vec_i = vec(&DMatrix::<f64>::identity(d, d));
    let b = d * d;
    let pairing: f64 = h.iter().enumerate().map(|(i, v)| pi[i / b] * v * vec_i[i % b]).sum();
    if pairing < 0.0 {
        h.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(SpectralReport {
        leading_eigenvalue: eig.eigenvalues[k],
        essential_radius_bound: lambda * spectral_top(t_blocks, theta),
        eigenfunction: Some(h),
    })
}

/// `F(r) = sum_x pi_x (1 - lambda) exp(theta T/2) (rI - lambda exp(theta T))^{-1} exp(theta T/2)`.
pub fn f_of_r(r: f64, pi: &[f64], lambda: f64, t_blocks: &[SymmetricMatrix], theta: f64) -> Result<SymmetricMatrix> {
    let pole = lambda * spectral_top(t_blocks, theta);
    if !(r > pole) {
        return Err(LiftError::InvalidArgument(format!("r = {r} must exceed lambda e^(theta b) = {pole}")));
    }
    let b = t_blocks[0].dim();
    let mut acc = DMatrix::zeros(b, b);
    for (t, &p) in t_blocks.iter().zip(pi) {
        let term = t.map_spectrum(|s| {
            let e = (theta * s).exp();
            (1.0 - lambda) * e / (r - lambda * e)
        });
        acc += term.as_matrix() * p;
    }
    Ok(SymmetricMatrix::symmetrize(acc))
}

/// Root `r*` of `lambda_max(F(r)) = 1` by bisection on
/// `(lambda e^{theta b}(1 + 1e-9), 10 e^{theta b}]`, stopping once the
/// bracket is narrower than `1e-10 max(1, r)`.
pub fn root_rstar(pi: &[f64], lambda: f64, t_blocks: &[SymmetricMatrix], theta: f64) -> Result<f64> {
    let top = spectral_top(t_blocks, theta);
    let g = |r: f64| -> Result<f64> { Ok(f_of_r(r, pi, lambda, t_blocks, theta)?.lambda_max() - 1.0) };
    let mut lo = if lambda > 0.0 { lambda * top * (1.0 + 1e-9) } else { top * 1e-12 };
    let mut hi = 10.0 * top;
    let (g_lo, g_hi) = (g(lo)?, g(hi)?);
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(LiftError::NoBracket(format!("lambda_max(F(r)) - 1 is {g_lo} at r = {lo} and {g_hi} at r = {hi}")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The two-state operator `K^theta` and its largest eigenvalue `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct KTheta {
    pub k: DMatrix<f64>,
    pub eta: f64,
}

/// `K^theta = D Q D` with `D = diag(e^{theta a'/2}, e^{theta b'/2})`,
/// `a' = a cos(phi)`, `b' = b cos(phi)` and `Q` the two-state Hoeffding
/// chain. `eta` comes from the characteristic quadratic.
pub fn k_theta(a: f64, b: f64, lambda: f64, theta: f64, phi: f64) -> Result<KTheta> {
    let (q, mu) = crate::chain::two_state_hoeffding_chain(a, b, lambda)?;
    let (ap, bp) = (a * phi.cos(), b * phi.cos());
    let dg = [(theta * ap / 2.0).exp(), (theta * bp / 2.0).exp()];
    let k = DMatrix::from_fn(2, 2, |i, j| dg[i] * q.p()[(i, j)] * dg[j]);
    let p = (lambda + (1.0 - lambda) * mu[1]) / (1.0 + lambda);
    let tr = (1.0 + lambda) * ((1.0 - p) * (theta * ap).exp() + p * (theta * bp).exp());
    let det = lambda * (theta * (ap + bp)).exp();
    let disc = (tr * tr - 4.0 * det).max(0.0);
    // Larger root of eta^2 - tr eta + det.
    let eta = 0.5 * (tr + disc.sqrt());
    Ok(KTheta { k, eta })
}

/// `exp(alpha(lambda) theta^2 cos^2(phi) (b - a)^2 / 8)`.
pub fn eta_tilde(a: f64, b: f64, lambda: f64, theta: f64, phi: f64) -> Result<f64> {
    let alpha = bounds::alpha(lambda).map_err(|e| LiftError::InvalidArgument(e.to_string()))?;
    let c = phi.cos();
    Ok((alpha * theta * theta * c * c * (b - a) * (b - a) / 8.0).exp())
}

/// `||Pi (P_hat E_T^theta)^n Pi||_pi` computed from the dense operators.
pub fn projected_power_norm(pi: &[f64], lambda: f64, t_blocks: &[SymmetricMatrix], theta: f64, n: usize) -> Result<f64> {
    let d = block_d(t_blocks)?;
    let e = mult_operator(t_blocks, theta)?;
    let p_hat = leon_perron_lift(pi, lambda, d)?;
    let m = pi.len();
    let proj = LiftedOperator { m, d, mat: kron(&DMatrix::from_fn(m, m, |_, j| pi[j]), &DMatrix::identity(d * d, d * d)) };
    let step = p_hat.compose(&e)?;
    let mut acc = proj.clone();
    for _ in 0..n {
        acc = step.compose(&acc)?;
    }
    Ok(pi_operator_norm(&proj.compose(&acc)?, pi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::leon_perron;

    fn diag(v: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::from_diagonal(v)
    }

    #[test]
    fn h_at_zero_phase_is_real() {
        let f = SymmetricMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, -2.0]]).unwrap();
        let h = build_h(&f, 0.0);
        assert!(h.iter().all(|z| z.im.abs() < 1e-16));
        let t = build_t(&f, 0.0);
        assert!((h.map(|z| z.re) - t.as_matrix()).amax() < 1e-15);
        assert!(build_h(&SymmetricMatrix::zeros(2), 0.3).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn t_examples() {
        assert!(build_t(&diag(&[1.0, -1.0]), std::f64::consts::FRAC_PI_2).as_matrix().amax() < 1e-16);
        let t = build_t(&diag(&[2.0, -3.0]), 0.0);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -0.5, -0.5, -3.0]));
        assert!((t.as_matrix() - want).amax() < 1e-15);
    }

    #[test]
    fn t_properties_rademacher() {
        let fam = vec![SymmetricMatrix::identity(2), SymmetricMatrix::scaled_identity(2, -1.0)];
        let phi = 0.4_f64;
        let rep = check_t_properties(&fam, &[0.5, 0.5], phi, Some((-1.0, 1.0)), Some(1.0));
        assert!(rep.passed);
        assert!(rep.mean_margin.abs() < 1e-16);
        assert!(rep.variance_margin.unwrap().abs() < 1e-15);
        let zero = vec![SymmetricMatrix::zeros(2); 2];
        assert!(check_t_properties(&zero, &[0.5, 0.5], 0.0, None, None).passed);
    }

    #[test]
    fn kernel_lift_single_state_and_scalar() {
        let c = crate::chain::validate_chain(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (p, _) = lift_kernel(&c, 2, DEFAULT_LIFT_CAP).unwrap();
        assert_eq!(p.matrix(), &DMatrix::identity(4, 4));
        let c = leon_perron(&[0.3, 0.7], 0.4).unwrap();
        let (p, proj) = lift_kernel(&c, 1, DEFAULT_LIFT_CAP).unwrap();
        assert_eq!(p.matrix(), c.p());
        let pp = proj.compose(&p).unwrap();
        assert!((pp.matrix() - proj.matrix()).amax() < 1e-15);
        assert!(matches!(lift_kernel(&c, 50, DEFAULT_LIFT_CAP), Err(LiftError::CapExceeded { size: 5000, .. })));
    }

    #[test]
    fn mult_operator_trivial_cases() {
        let ts = vec![diag(&[0.5]), diag(&[-1.0])];
        assert_eq!(mult_operator(&ts, 0.0).unwrap().matrix(), &DMatrix::identity(2, 2));
        let e = mult_operator(&ts, 2.0).unwrap();
        assert!((e.matrix()[(0, 0)] - 1f64.exp()).abs() < 1e-15);
        assert!((e.matrix()[(1, 1)] - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mult_operator_commutes_with_kernel_only_when_constant() {
        let c = leon_perron(&[0.4, 0.6], 0.3).unwrap();
        let (p, _) = lift_kernel(&c, 1, DEFAULT_LIFT_CAP).unwrap();
        let comm = |ts: &[SymmetricMatrix]| {
            let e = mult_operator(ts, 1.0).unwrap();
            (e.compose(&p).unwrap().matrix() - p.compose(&e).unwrap().matrix()).amax()
        };
        assert!(comm(&[diag(&[0.7]), diag(&[0.7])]) < 1e-15);
        assert!(comm(&[diag(&[0.7]), diag(&[-0.2])]) > 1e-3);
    }

    #[test]
    fn sandwich_trivial_cases() {
        let pi = [0.25, 0.75];
        let p_hat = leon_perron_lift(&pi, 0.5, 1).unwrap();
        let s = sandwich(&LiftedOperator::identity(2, 1), &p_hat, &pi).unwrap();
        assert_eq!(s.matrix(), p_hat.matrix());
        let t = vec![build_t(&diag(&[0.3, -0.2]), 0.0)];
        let e = mult_operator(&t, 0.5).unwrap();
        let s = sandwich(&e, &leon_perron_lift(&[1.0], 0.2, 2).unwrap(), &[1.0]).unwrap();
        let want = t[0].exp_scaled(1.0).unwrap();
        assert!((s.matrix() - want.as_matrix()).amax() < 1e-14);
    }

    #[test]
    fn pi_norm_of_identity_and_gap() {
        let c = leon_perron(&[0.2, 0.3, 0.5], 0.6).unwrap();
        assert!((pi_operator_norm(&LiftedOperator::<f64>::identity(3, 2), c.pi()) - 1.0).abs() < 1e-14);
        let (p, proj) = lift_kernel(&c, 2, DEFAULT_LIFT_CAP).unwrap();
        assert!((pi_operator_norm(&p.minus(&proj).unwrap(), c.pi()) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mgf_at_zero_theta_is_dimension() {
        let c = leon_perron(&[0.5, 0.5], 0.3).unwrap();
        let fam = vec![diag(&[1.0, -0.5, 0.2]), diag(&[-1.0, 0.5, -0.2])];
        let obs = ObservableSequence::time_independent(fam, 5).unwrap();
        assert!((exact_mgf(&c, &obs, 0.0, 0.7).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn mgf_single_step_closed_form() {
        let c = leon_perron(&[0.3, 0.7], 0.5).unwrap();
        let f0 = SymmetricMatrix::from_rows(&[vec![0.7, 0.3], vec![0.3, -0.1]]).unwrap();
        let f1 = f0.scale(-0.3 / 0.7);
        let obs = ObservableSequence::time_independent(vec![f0.clone(), f1.clone()], 1).unwrap();
        let (theta, phi) = (1.3, 0.6_f64);
        let want: f64 =
            [(0.3, &f0), (0.7, &f1)].iter().map(|(p, f)| p * f.exp_scaled(theta * phi.cos()).unwrap().as_matrix().trace()).sum();
        let got = exact_mgf(&c, &obs, theta, phi).unwrap();
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn mgf_log_scale_survives_long_horizons() {
        let c = leon_perron(&[0.5, 0.5], 0.5).unwrap();
        let obs = ObservableSequence::scalar(&[1.0, -1.0], 2, 5000).unwrap();
        let l = exact_log_mgf(&c, &obs, 3.0, 0.0).unwrap();
        assert!(l.is_finite() && l > 709.0);
        assert!(matches!(exact_mgf(&c, &obs, 3.0, 0.0), Err(LiftError::Overflow { .. })));
    }

    #[test]
    fn observable_validation() {
        let pi = [0.5, 0.5];
        let fam = vec![diag(&[1.0, 0.5]), diag(&[-1.0, -0.5])];
        let obs = ObservableSequence::time_independent(fam.clone(), 3).unwrap();
        assert!(obs.clone().with_hoeffding(vec![(-1.0, 1.0)], &pi).is_ok());
        assert!(obs.clone().with_hoeffding(vec![(-0.9, 1.0)], &pi).is_err());
        assert!(obs.clone().with_bernstein(vec![1.0], 1.0, &pi).is_ok());
        assert!(obs.clone().with_bernstein(vec![0.9], 1.0, &pi).is_err());
        let skew = ObservableSequence::time_independent(vec![diag(&[1.0, 0.0]), diag(&[0.0, 0.0])], 2).unwrap();
        assert!(skew.with_hoeffding(vec![(-1.0, 1.0)], &pi).is_err());
        assert_eq!(obs.tight_ranges(), vec![(-1.0, 1.0); 3]);
        let neg = obs.with_hoeffding(vec![(-1.0, 2.0)], &pi).unwrap().negated();
        assert_eq!(neg.hoeffding_ranges().unwrap()[0], (-2.0, 1.0));
    }

    #[test]
    fn sandwich_at_zero_theta_has_unit_eigenvalue() {
        let t = vec![build_t(&diag(&[1.0, -1.0]), 0.0), build_t(&diag(&[-1.0, 1.0]), 0.0)];
        let rep = leading_eigenvalue_sandwich(&[0.5, 0.5], 0.4, &t, 0.0).unwrap();
        assert!((rep.leading_eigenvalue - 1.0).abs() < 1e-14);
        assert!((root_rstar(&[0.5, 0.5], 0.4, &t, 0.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_theta_trivial_cases() {
        let k = k_theta(-1.0, 2.0, 0.3, 0.0, 0.0).unwrap();
        assert!((k.eta - 1.0).abs() < 1e-15);
        let (q, _) = crate::chain::two_state_hoeffding_chain(-1.0, 2.0, 0.3).unwrap();
        assert!((k.k - q.p()).amax() < 1e-15);
        assert_eq!(eta_tilde(-1.0, 1.0, 0.5, 0.0, 0.0).unwrap(), 1.0);
        assert!((eta_tilde(-1.0, 1.0, 0.0, 1.0, 0.0).unwrap() - 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn projected_norm_at_zero_theta_is_one() {
        let t = vec![build_t(&diag(&[0.5]), 0.0), build_t(&diag(&[-0.5]), 0.0)];
        for n in [0, 1, 5] {
            assert!((projected_power_norm(&[0.5, 0.5], 0.3, &t, 0.0, n).unwrap() - 1.0).abs() < 1e-13);
        }
    }
}
