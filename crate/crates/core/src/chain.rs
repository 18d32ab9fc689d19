//! Finite Markov chains on `{0, .., m-1}`.
//!
//! Geometry follows `l2(pi)`: `<f, g>_pi = sum_x pi_x f(x) g(x)`. The
//! absolute spectral gap parameter is the `pi`-operator norm of `P - 1 pi^T`,
//! which for nonreversible chains is a singular value rather than an
//! eigenvalue modulus.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums must equal one to this absolute tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Residual tolerated in `pi^T P = pi^T`.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Singular values of `I - P^T` below this count as a unit eigenvalue.
pub const SIMPLE_EIG_TOL: f64 = 1e-9;
/// Chains whose gap parameter exceeds `1 - GAP_TOL` are rejected.
pub const GAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("no unique positive stationary distribution: {0}")]
    NoUniqueStationary(String),
    #[error("gap parameter {0} is not below 1 (reducible or periodic chain)")]
    NoSpectralGap(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ChainError>;

/// Validated chain: row-stochastic `P`, its unique positive stationary
/// distribution and its gap parameter `lambda` in `[0, 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteChain {
    p: DMatrix<f64>,
    pi: Vec<f64>,
    lambda: f64,
    #[serde(skip)]
    row_cdf: Vec<Vec<f64>>,
    #[serde(skip)]
    pi_cdf: Vec<f64>,
}

fn cdf(w: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = w
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    // Rounding can leave the last entry a hair below 1.
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

impl FiniteChain {
    /// Same as [`validate_chain`].
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        validate_chain(p)
    }

    fn assemble(p: DMatrix<f64>, pi: Vec<f64>, lambda: f64) -> Self {
        let m = p.nrows();
        let row_cdf = (0..m).map(|i| cdf(p.row(i).iter().copied())).collect();
        let pi_cdf = cdf(pi.iter().copied());
        FiniteChain { p, pi, lambda, row_cdf, pi_cdf }
    }

    pub fn m(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `1 pi^T`.
    pub fn pi_projector(&self) -> DMatrix<f64> {
        let m = self.m();
        DMatrix::from_fn(m, m, |_, j| self.pi[j])
    }

    /// `||h||_pi`.
    pub fn pi_norm(&self, h: &[f64]) -> f64 {
        self.pi.iter().zip(h).map(|(p, x)| p * x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn step(&self, from: usize, u: f64) -> usize {
        draw(&self.row_cdf[from], u)
    }

    pub(crate) fn draw_stationary(&self, u: f64) -> usize {
        draw(&self.pi_cdf, u)
    }
}

/// Checks that `p` is a finite, square, row-stochastic matrix with a unique
/// positive stationary distribution and a gap parameter below one.
pub fn validate_chain(p: DMatrix<f64>) -> Result<FiniteChain> {
    check_stochastic(&p)?;
    let pi = stationary_distribution(&p)?;
    let lambda = absolute_spectral_gap(&p, &pi)?;
    if lambda > 1.0 - GAP_TOL {
        return Err(ChainError::NoSpectralGap(lambda));
    }
    Ok(FiniteChain::assemble(p, pi, lambda))
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    let m = p.nrows();
    if m == 0 || p.ncols() != m {
        return Err(ChainError::InvalidMatrix(format!("expected a non-empty square matrix, got {}x{}", m, p.ncols())));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(ChainError::InvalidMatrix("non-finite entries".into()));
    }
    if let Some(x) = p.iter().find(|&&x| x < 0.0) {
        return Err(ChainError::InvalidMatrix(format!("negative entry {x}")));
    }
    for row in 0..m {
        let sum: f64 = p.row(row).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ChainError::NotStochastic { row, sum });
        }
    }
    Ok(())
}

fn normalize_positive(v: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    let out: Vec<f64> = v.iter().map(|x| x / s).collect();
    out.iter().all(|&x| x > 0.0).then_some(out)
}

fn stationary_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let v = DVector::from_column_slice(pi);
    (p.transpose() * &v - &v).amax()
}

/// Unique stationary distribution of a row-stochastic `p`, taken from the
/// null space of `I - P^T`. Power iteration on the lazy chain is used when the
/// null vector is not numerically positive.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_stochastic(p)?;
    let m = p.nrows();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let a = DMatrix::identity(m, m) - p.transpose();
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let small = order.iter().filter(|&&k| svd.singular_values[k] < SIMPLE_EIG_TOL).count();
    if small != 1 {
        return Err(ChainError::NoUniqueStationary(format!("{small} singular values of I - P^T below {SIMPLE_EIG_TOL:e}")));
    }
    let null: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let candidate = normalize_positive(&null).or_else(|| power_iteration(p, 1_000_000));
    match candidate {
        Some(pi) if stationary_residual(p, &pi) <= STATIONARY_TOL => Ok(pi),
        Some(pi) => Err(ChainError::NoUniqueStationary(format!("stationarity residual {:e}", stationary_residual(p, &pi)))),
        None => Err(ChainError::NoUniqueStationary("stationary vector is not strictly positive".into())),
    }
}

/// Iterates `pi <- pi (I + P) / 2` from the uniform distribution.
pub fn power_iteration(p: &DMatrix<f64>, max_iter: usize) -> Option<Vec<f64>> {
    let m = p.nrows();
    let lazy = (DMatrix::identity(m, m) + p) * 0.5;
    let lazy_t = lazy.transpose();
    let mut v = DVector::from_element(m, 1.0 / m as f64);
    for _ in 0..max_iter {
        let next = &lazy_t * &v;
        let delta = (&next - &v).amax();
        v = next;
        if delta < 1e-16 {
            break;
        }
    }
    normalize_positive(v.as_slice())
}

/// `lambda(P) = ||P - 1 pi^T||_pi`, the largest singular value of
/// `D^{1/2} (P - 1 pi^T) D^{-1/2}` with `D = diag(pi)`.
pub fn absolute_spectral_gap(p: &DMatrix<f64>, pi: &[f64]) -> Result<f64> {
    let m = p.nrows();
    if pi.len() != m || p.ncols() != m {
        return Err(ChainError::InvalidParameter("pi and P dimensions differ".into()));
    }
    if pi.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(ChainError::InvalidDistribution("pi must be strictly positive".into()));
    }
    let sq: Vec<f64> = pi.iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(m, m, |i, j| sq[i] * (p[(i, j)] - pi[j]) / sq[j]);
    Ok(s.singular_values().max())
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(ChainError::InvalidDistribution(format!("{what} must be a nonnegative finite vector")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL.max(1e-10) {
        return Err(ChainError::InvalidDistribution(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Leon-Perron chain `P = cI + (1 - c) 1 pi^T`. Its gap parameter is `c`
/// (or 0 on a single state, where `P - 1 pi^T` vanishes).
pub fn leon_perron(pi: &[f64], c: f64) -> Result<FiniteChain> {
    check_distribution(pi, "pi")?;
    if pi.iter().any(|&x| x <= 0.0) {
        return Err(ChainError::InvalidDistribution("pi must be strictly positive".into()));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(ChainError::InvalidParameter(format!("Leon-Perron parameter {c} not in [0, 1)")));
    }
    let m = pi.len();
    let p = DMatrix::from_fn(m, m, |i, j| if i == j { c } else { 0.0 } + (1.0 - c) * pi[j]);
    let lambda = if m == 1 { 0.0 } else { c };
    Ok(FiniteChain::assemble(p, pi.to_vec(), lambda))
}

/// Two-state chain `Q = lambda I + (1 - lambda) 1 mu^T` with
/// `mu = (b, -a) / (b - a)`, so that the two-point observable `(a, b)` has
/// mean zero under `mu`. Returns `(Q, mu)`.
pub fn two_state_hoeffding_chain(a: f64, b: f64, lambda: f64) -> Result<(FiniteChain, [f64; 2])> {
    if !(a <= 0.0 && 0.0 <= b && a < b) {
        return Err(ChainError::InvalidParameter(format!("need a <= 0 <= b and a < b, got a={a}, b={b}")));
    }
    let mu = [b / (b - a), -a / (b - a)];
    if mu.contains(&0.0) {
        // One of the two states is never visited; the chain collapses.
        return Err(ChainError::InvalidParameter(format!(
            "degenerate range a={a}, b={b}: one endpoint must be nonzero on each side"
        )));
    }
    Ok((leon_perron(&mu, lambda)?, mu))
}

/// Where the first state of a trajectory is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    #[default]
    Stationary,
    Custom(Vec<f64>),
}

impl InitialDistribution {
    /// Resolves to a concrete probability vector for `chain`.
    pub fn resolve(&self, chain: &FiniteChain) -> Result<Vec<f64>> {
        match self {
            InitialDistribution::Stationary => Ok(chain.pi().to_vec()),
            InitialDistribution::Custom(nu) => {
                if nu.len() != chain.m() {
                    return Err(ChainError::InvalidDistribution(format!(
                        "initial distribution has {} entries, chain has {} states",
                        nu.len(),
                        chain.m()
                    )));
                }
                check_distribution(nu, "initial distribution")?;
                Ok(nu.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub seed: u64,
    pub initial: InitialDistribution,
}

/// Generator for trial `k` of a batch seeded with `master`. Each trial gets
/// its own ChaCha stream, so batches are reproducible regardless of how
/// trials are scheduled across threads.
pub fn trial_rng(master: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k);
    rng
}

/// Precomputed sampler for the initial state.
#[derive(Debug, Clone)]
pub struct PathSampler<'a> {
    chain: &'a FiniteChain,
    init_cdf: Option<Vec<f64>>,
}

impl<'a> PathSampler<'a> {
    pub fn new(chain: &'a FiniteChain, initial: &InitialDistribution) -> Result<Self> {
        let init_cdf = match initial {
            InitialDistribution::Stationary => None,
            other => Some(cdf(other.resolve(chain)?.into_iter())),
        };
        Ok(PathSampler { chain, init_cdf })
    }

    /// Fills `out` with a path of length `out.len()`.
    pub fn fill<R: Rng>(&self, rng: &mut R, out: &mut [usize]) {
        if out.is_empty() {
            return;
        }
        let u: f64 = rng.random();
        out[0] = match &self.init_cdf {
            None => self.chain.draw_stationary(u),
            Some(c) => draw(c, u),
        };
        for k in 1..out.len() {
            out[k] = self.chain.step(out[k - 1], rng.random());
        }
    }
}

pub fn sample_trajectory(chain: &FiniteChain, n: usize, seed: u64, initial: &InitialDistribution) -> Result<Trajectory> {
    if n == 0 {
        return Err(ChainError::InvalidParameter("horizon must be at least 1".into()));
    }
    let sampler = PathSampler::new(chain, initial)?;
    let mut states = vec![0; n];
    sampler.fill(&mut ChaCha8Rng::seed_from_u64(seed), &mut states);
    Ok(Trajectory { states, seed, initial: initial.clone() })
}

/// Stationary Leon-Perron path built from independent refresh indicators
/// `I_j ~ Ber(1 - lambda)` (with `I_1 = 1`) and fresh draws `Z_j ~ pi`: the
/// state at time `k` is the draw made at the last refresh up to `k`.
#[derive(Debug, Clone)]
pub struct CoupledSampler {
    pi_cdf: Vec<f64>,
    lambda: f64,
}

impl CoupledSampler {
    pub fn new(pi: &[f64], lambda: f64) -> Result<Self> {
        check_distribution(pi, "pi")?;
        if !(0.0..1.0).contains(&lambda) {
            return Err(ChainError::InvalidParameter(format!("lambda {lambda} not in [0, 1)")));
        }
        Ok(CoupledSampler { pi_cdf: cdf(pi.iter().copied()), lambda })
    }

    /// Fills `out` with states; `refresh[k]` records `I_k` when provided.
    pub fn fill<R: Rng>(&self, rng: &mut R, out: &mut [usize], mut refresh: Option<&mut [bool]>) {
        let mut current = 0;
        for k in 0..out.len() {
            let fresh = k == 0 || rng.random::<f64>() >= self.lambda;
            if fresh {
                current = draw(&self.pi_cdf, rng.random());
            }
            out[k] = current;
            if let Some(r) = refresh.as_deref_mut() {
                r[k] = fresh;
            }
        }
    }
}

pub fn leon_perron_coupled_sample(pi: &[f64], lambda: f64, n: usize, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(ChainError::InvalidParameter("horizon must be at least 1".into()));
    }
    let sampler = CoupledSampler::new(pi, lambda)?;
    let mut states = vec![0; n];
    sampler.fill(&mut ChaCha8Rng::seed_from_u64(seed), &mut states, None);
    Ok(Trajectory { states, seed, initial: InitialDistribution::Stationary })
}

/// `||d nu / d pi||_{pi, p} = (sum_x pi_x |nu_x / pi_x|^p)^{1/p}`.
pub fn radon_nikodym_norm(nu: &[f64], pi: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(ChainError::InvalidParameter(format!("p = {p} must lie in [1, inf)")));
    }
    if nu.len() != pi.len() {
        return Err(ChainError::InvalidDistribution("nu and pi have different lengths".into()));
    }
    check_distribution(nu, "nu")?;
    check_distribution(pi, "pi")?;
    if pi.iter().any(|&x| x <= 0.0) {
        return Err(ChainError::InvalidDistribution("pi must be strictly positive".into()));
    }
    let s: f64 = nu.iter().zip(pi).map(|(&v, &w)| w * (v / w).abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// Random probability vector with entries bounded away from zero.
pub fn random_distribution<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random chain with strictly positive transition probabilities, hence
/// irreducible and aperiodic.
pub fn random_chain<R: Rng>(rng: &mut R, m: usize) -> FiniteChain {
    let mut p = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.05..1.0));
    for i in 0..m {
        let s: f64 = p.row(i).sum();
        p.row_mut(i).iter_mut().for_each(|x| *x /= s);
        fix_row_sum(&mut p, i);
    }
    validate_chain(p).expect("positive kernels are ergodic")
}

/// Random reversible chain `P = D_w^{-1} W` from a symmetric positive
/// weight matrix `W`.
pub fn random_reversible_chain<R: Rng>(rng: &mut R, m: usize) -> FiniteChain {
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let x = rng.random_range(0.05..1.0);
            w[(i, j)] = x;
            w[(j, i)] = x;
        }
    }
    let mut p = w.clone();
    for i in 0..m {
        let s: f64 = w.row(i).sum();
        p.row_mut(i).iter_mut().for_each(|x| *x /= s);
        fix_row_sum(&mut p, i);
    }
    validate_chain(p).expect("positive kernels are ergodic")
}

fn fix_row_sum(p: &mut DMatrix<f64>, i: usize) {
    let m = p.ncols();
    let rest: f64 = (0..m - 1).map(|j| p[(i, j)]).sum();
    p[(i, m - 1)] = 1.0 - rest;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn identity_chain_rejected() {
        let err = validate_chain(DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, ChainError::NoUniqueStationary(_)), "{err}");
    }

    #[test]
    fn periodic_chain_rejected() {
        let err = validate_chain(mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap_err();
        assert!(matches!(err, ChainError::NoSpectralGap(_)), "{err}");
    }

    #[test]
    fn non_stochastic_rejected() {
        let err = validate_chain(mat(&[&[0.5, 0.6], &[0.5, 0.5]])).unwrap_err();
        assert!(matches!(err, ChainError::NotStochastic { row: 0, .. }));
    }

    #[test]
    fn iid_chain() {
        let c = validate_chain(mat(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert!((c.pi()[0] - 0.5).abs() < 1e-15 && (c.pi()[1] - 0.5).abs() < 1e-15);
        assert!(c.lambda() < 1e-15);
    }

    #[test]
    fn doubly_stochastic_uniform() {
        let p = mat(&[&[0.2, 0.3, 0.5], &[0.3, 0.4, 0.3], &[0.5, 0.3, 0.2]]);
        let pi = stationary_distribution(&p).unwrap();
        for x in pi {
            assert!((x - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_state_closed_form() {
        let (p, q) = (0.3, 0.1);
        let pi = stationary_distribution(&mat(&[&[1.0 - p, p], &[q, 1.0 - q]])).unwrap();
        assert!((pi[0] - q / (p + q)).abs() < 1e-14);
        assert!((pi[1] - p / (p + q)).abs() < 1e-14);
    }

    #[test]
    fn single_state_chain() {
        let c = validate_chain(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(c.pi(), &[1.0]);
        assert_eq!(c.lambda(), 0.0);
    }

    #[test]
    fn leon_perron_examples() {
        let c = leon_perron(&[0.3, 0.7], 0.0).unwrap();
        assert_eq!(c.p()[(0, 0)], 0.3);
        assert_eq!(c.p()[(1, 0)], 0.3);
        let c = leon_perron(&[0.5, 0.5], 0.5).unwrap();
        assert_eq!(c.p(), &mat(&[&[0.75, 0.25], &[0.25, 0.75]]));
        assert_eq!(c.lambda(), 0.5);
        assert!(leon_perron(&[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn two_state_hoeffding_examples() {
        let (_, mu) = two_state_hoeffding_chain(-1.0, 1.0, 0.0).unwrap();
        assert_eq!(mu, [0.5, 0.5]);
        let (_, mu) = two_state_hoeffding_chain(-1.0, 3.0, 0.0).unwrap();
        assert_eq!(mu, [0.75, 0.25]);
        let (q, _) = two_state_hoeffding_chain(-1.0, 1.0, 0.3).unwrap();
        let want = mat(&[&[0.65, 0.35], &[0.35, 0.65]]);
        assert!((q.p() - want).amax() < 1e-15);
        assert!(two_state_hoeffding_chain(0.5, 1.0, 0.3).is_err());
        assert!(two_state_hoeffding_chain(-1.0, -0.5, 0.3).is_err());
    }

    #[test]
    fn hoeffding_chain_has_mean_zero() {
        for (a, b) in [(-1.0, 1.0), (-0.3, 2.0), (-5.0, 0.25)] {
            let (_, mu) = two_state_hoeffding_chain(a, b, 0.2).unwrap();
            assert!((mu[0] * a + mu[1] * b).abs() < 1e-15);
        }
    }

    #[test]
    fn radon_nikodym_examples() {
        let pi = [0.5, 0.5];
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert!((radon_nikodym_norm(&pi, &pi, p).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((radon_nikodym_norm(&[1.0, 0.0], &pi, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((radon_nikodym_norm(&[1.0, 0.0], &pi, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(radon_nikodym_norm(&pi, &pi, 0.5).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = leon_perron(&[0.2, 0.3, 0.5], 0.4).unwrap();
        let a = sample_trajectory(&c, 50, 7, &InitialDistribution::Stationary).unwrap();
        let b = sample_trajectory(&c, 50, 7, &InitialDistribution::Stationary).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_trajectory(&c, 1, 7, &InitialDistribution::Stationary).unwrap().states.len(), 1);
        let a = leon_perron_coupled_sample(&[0.2, 0.8], 0.5, 40, 3).unwrap();
        let b = leon_perron_coupled_sample(&[0.2, 0.8], 0.5, 40, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn custom_initial_is_respected() {
        let c = leon_perron(&[0.5, 0.5], 0.9).unwrap();
        let init = InitialDistribution::Custom(vec![0.0, 1.0]);
        for seed in 0..20 {
            assert_eq!(sample_trajectory(&c, 3, seed, &init).unwrap().states[0], 1);
        }
        assert!(sample_trajectory(&c, 3, 0, &InitialDistribution::Custom(vec![1.0])).is_err());
    }

    #[test]
    fn coupled_sampler_without_memory_is_iid() {
        let sampler = CoupledSampler::new(&[0.5, 0.5], 0.0).unwrap();
        let mut out = vec![0; 10];
        let mut refresh = vec![false; 10];
        sampler.fill(&mut trial_rng(1, 0), &mut out, Some(&mut refresh));
        assert!(refresh.iter().all(|&r| r));
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(5, 0).random();
        let b: u64 = trial_rng(5, 1).random();
        let c: u64 = trial_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
