//! Closed-form MGF and tail bounds, the Chernoff pipeline that turns an MGF
//! bound into a tail bound, and the constants of the Bernstein recursion.
//!
//! Tail bounds carry the prefactor `d^{2 - pi/4}` and evaluate the MGF bound
//! at `4 theta / pi`; both come from the trace inequality used to pass from
//! a product of exponentials to the exponential of a sum.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::chain::radon_nikodym_norm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("theta = {theta} outside the admissible domain theta < {limit} (lambda e^(M theta) must stay below 1)")]
    Domain { theta: f64, limit: f64 },
    #[error("empty admissible theta interval: {0}")]
    EmptyDomain(String),
    #[error("correction already applied: {0}")]
    AlreadyApplied(String),
}

pub type Result<T> = std::result::Result<T, BoundError>;

pub const WARN_BERNSTEIN_DOMAIN: &str =
    "bernstein theta domain: using lambda e^(M theta) < 1, i.e. theta < log(1/lambda)/M; the alternative log(1-lambda)/M is negative for every lambda in (0,1)";
pub const WARN_BERNSTEIN_SIGN: &str =
    "bernstein tail: exponent taken negative, as the Chernoff derivation requires; a positive exponent would exceed 1";
pub const WARN_ALPHA1: &str = "bernstein recursion: alpha_1 = 1 + V(e^(M theta) - M theta - 1)/M^2";
pub const WARN_NONSTATIONARY: &str =
    "nonstationary start: factor ||dnu/dpi||_(pi,p) applied multiplicatively; a Holder argument yields ||dnu/dpi||_(pi,p) E_pi[H^q]^(1/q) instead, which scales differently in theta";
pub const WARN_BETA_BRANCH: &str = "beta(lambda) is discontinuous at 0: 4/(3 pi) at lambda = 0 versus 8/pi as lambda -> 0+";

/// Exponent shift of the tail prefactor relative to the MGF bound.
pub fn tail_prefactor(d: usize) -> f64 {
    (d as f64).powf(2.0 - PI / 4.0)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(BoundError::InvalidParameter(format!("lambda = {lambda} not in [0, 1)")));
    }
    Ok(())
}

/// `(1 + lambda) / (1 - lambda)`.
pub fn alpha(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 + lambda) / (1.0 - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaBranch {
    /// `lambda = 0`: `4 / (3 pi)`.
    Independent,
    /// `lambda > 0`: `(8 / pi) / (1 - lambda)`.
    Markov,
}

pub fn beta_branch(lambda: f64) -> Result<BetaBranch> {
    check_lambda(lambda)?;
    Ok(if lambda == 0.0 { BetaBranch::Independent } else { BetaBranch::Markov })
}

pub fn beta(lambda: f64) -> Result<f64> {
    Ok(match beta_branch(lambda)? {
        BetaBranch::Independent => 4.0 / (3.0 * PI),
        BetaBranch::Markov => (8.0 / PI) / (1.0 - lambda),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingParams {
    pub d: usize,
    pub lambda: f64,
    pub ranges: Vec<(f64, f64)>,
}

impl HoeffdingParams {
    pub fn new(d: usize, lambda: f64, ranges: Vec<(f64, f64)>) -> Result<Self> {
        check_lambda(lambda)?;
        if d == 0 || ranges.is_empty() {
            return Err(BoundError::InvalidParameter("need d >= 1 and at least one range".into()));
        }
        if let Some(&(a, b)) = ranges.iter().find(|&&(a, b)| !(a <= 0.0 && 0.0 <= b && a < b)) {
            return Err(BoundError::InvalidParameter(format!("range ({a}, {b}) must satisfy a <= 0 <= b, a < b")));
        }
        Ok(HoeffdingParams { d, lambda, ranges })
    }

    /// `sum_j (b_j - a_j)^2`.
    pub fn width_sq(&self) -> f64 {
        self.ranges.iter().map(|(a, b)| (b - a) * (b - a)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinParams {
    pub d: usize,
    pub lambda: f64,
    pub variances: Vec<f64>,
    pub m_bound: f64,
    pub sigma_sq: f64,
}

impl BernsteinParams {
    pub fn new(d: usize, lambda: f64, variances: Vec<f64>, m_bound: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if d == 0 || variances.is_empty() {
            return Err(BoundError::InvalidParameter("need d >= 1 and at least one variance proxy".into()));
        }
        if !(m_bound > 0.0) || !m_bound.is_finite() {
            return Err(BoundError::InvalidParameter(format!("M = {m_bound} must be positive and finite")));
        }
        let cap = m_bound * m_bound * (1.0 + 1e-12);
        if let Some(v) = variances.iter().find(|&&v| !(0.0..=cap).contains(&v)) {
            return Err(BoundError::InvalidParameter(format!("variance proxy {v} must lie in [0, M^2]")));
        }
        let sigma_sq = variances.iter().sum();
        Ok(BernsteinParams { d, lambda, variances, m_bound, sigma_sq })
    }
}

/// Interval `(0, hi)` of admissible Chernoff parameters; `hi = None` means
/// unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDomain {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl ThetaDomain {
    pub const POSITIVE: ThetaDomain = ThetaDomain { lo: 0.0, hi: None };

    pub fn contains(&self, theta: f64) -> bool {
        theta > self.lo && self.hi.is_none_or(|h| theta < h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Correction {
    /// Doubling from the real embedding of a complex Hermitian observable.
    ComplexEmbedding,
    /// Factor `||dnu/dpi||_(pi,p)` with conjugate exponent `q` (`None` for `p = 1`).
    Nonstationary { p: f64, q: Option<f64>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value: f64,
    pub theta_used: f64,
    pub theta_domain: ThetaDomain,
    pub formula_id: String,
    pub corrections: Vec<Correction>,
    pub warnings: Vec<String>,
}

fn check_theta(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta < 0.0 {
        return Err(BoundError::InvalidParameter(format!("theta = {theta} must be finite and nonnegative")));
    }
    Ok(())
}

fn hoeffding_exponent(p: &HoeffdingParams, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(theta * theta * alpha(p.lambda)? * p.width_sq() / 8.0)
}

/// `log d + theta^2 alpha(lambda) sum (b_j - a_j)^2 / 8`.
pub fn hoeffding_log_mgf_bound(p: &HoeffdingParams, theta: f64) -> Result<f64> {
    Ok((p.d as f64).ln() + hoeffding_exponent(p, theta)?)
}

/// `d exp((theta^2 / 2) alpha(lambda) sum (b_j - a_j)^2 / 4)`.
pub fn hoeffding_mgf_bound(p: &HoeffdingParams, theta: f64) -> Result<f64> {
    Ok(p.d as f64 * hoeffding_exponent(p, theta)?.exp())
}

/// `d^{2 - pi/4} exp(-t^2 pi^2 / (8 alpha(lambda) sum (b_j - a_j)^2))`,
/// attained at `theta = t pi^2 / (4 alpha S)`.
pub fn hoeffding_tail_bound(p: &HoeffdingParams, t: f64) -> Result<BoundReport> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BoundError::InvalidParameter(format!("t = {t} must be finite and nonnegative")));
    }
    let a = alpha(p.lambda)?;
    let s = p.width_sq();
    Ok(BoundReport {
        value: tail_prefactor(p.d) * (-t * t * PI * PI / (8.0 * a * s)).exp(),
        theta_used: t * PI * PI / (4.0 * a * s),
        theta_domain: ThetaDomain::POSITIVE,
        formula_id: "hoeffding.tail".into(),
        corrections: vec![],
        warnings: vec![],
    })
}

/// `theta < log(1/lambda) / M`, unbounded when `lambda = 0`.
pub fn bernstein_domain(lambda: f64, m_bound: f64) -> ThetaDomain {
    let hi = (lambda > 0.0).then(|| (1.0 / lambda).ln() / m_bound);
    ThetaDomain { lo: 0.0, hi }
}

fn bernstein_exponent(p: &BernsteinParams, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let m = p.m_bound;
    let e = (m * theta).exp();
    if p.lambda * e >= 1.0 {
        return Err(BoundError::Domain { theta, limit: bernstein_domain(p.lambda, m).hi.unwrap_or(f64::INFINITY) });
    }
    let r = p.sigma_sq / (m * m);
    let em1 = (m * theta).exp_m1();
    // e^x - x - 1 as expm1(x) - x keeps precision at small x.
    Ok(r * (em1 - m * theta) + r * p.lambda * em1 * em1 / (1.0 - p.lambda * e))
}

/// Logarithm of [`bernstein_mgf_bound`].
pub fn bernstein_log_mgf_bound(p: &BernsteinParams, theta: f64) -> Result<f64> {
    Ok((p.d as f64).ln() + bernstein_exponent(p, theta)?)
}

/// `d exp((s/M^2)(e^{M theta} - M theta - 1) + (s/M^2) lambda (e^{M theta} - 1)^2 / (1 - lambda e^{M theta}))`
/// with `s = sigma^2`, on `theta < log(1/lambda)/M`.
pub fn bernstein_mgf_bound(p: &BernsteinParams, theta: f64) -> Result<f64> {
    Ok(p.d as f64 * bernstein_exponent(p, theta)?.exp())
}

/// `d^{2 - pi/4} exp(-(t^2 pi^2 / 32) / (alpha sigma^2 + beta M t))`.
///
/// `theta_used = t pi^2 / (16 (alpha sigma^2 + beta M t))` is the parameter
/// at which a Bernstein-form exponent `v theta^2 / (2(1 - c theta))` with
/// `v = 16 alpha sigma^2 / pi^2`, `c = 16 beta M / pi^2` attains this value.
pub fn bernstein_tail_bound(p: &BernsteinParams, t: f64) -> Result<BoundReport> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BoundError::InvalidParameter(format!("t = {t} must be finite and nonnegative")));
    }
    let a = alpha(p.lambda)?;
    let b = beta(p.lambda)?;
    let denom = a * p.sigma_sq + b * p.m_bound * t;
    let mut warnings = vec![WARN_BERNSTEIN_SIGN.to_string()];
    if p.lambda == 0.0 {
        warnings.push(WARN_BETA_BRANCH.to_string());
    }
    let value = if t == 0.0 { tail_prefactor(p.d) } else { tail_prefactor(p.d) * (-(t * t * PI * PI / 32.0) / denom).exp() };
    let theta_used = if t == 0.0 { 0.0 } else { t * PI * PI / (16.0 * denom) };
    Ok(BoundReport {
        value,
        theta_used,
        theta_domain: ThetaDomain { lo: 0.0, hi: Some(PI * PI / (16.0 * b * p.m_bound)) },
        formula_id: "bernstein.tail".into(),
        corrections: vec![],
        warnings,
    })
}

/// `(alpha_1, alpha_2, alpha_3)` of the one-step Bernstein recursion.
pub fn bernstein_alphas(v: f64, m_bound: f64, theta: f64) -> (f64, f64, f64) {
    let x = m_bound * theta;
    let em1 = x.exp_m1();
    let a1 = 1.0 + v * (em1 - x) / (m_bound * m_bound);
    let a2 = v.sqrt() * em1 / m_bound;
    (a1, a2, x.exp())
}

/// `(alpha_1 + lambda alpha_2^2 / (1 - lambda alpha_3))^n`.
pub fn recursive_norm_bound(v: f64, m_bound: f64, lambda: f64, theta: f64, n: usize) -> Result<f64> {
    check_lambda(lambda)?;
    let (a1, a2, a3) = bernstein_alphas(v, m_bound, theta);
    if lambda * a3 >= 1.0 {
        return Err(BoundError::Domain { theta, limit: bernstein_domain(lambda, m_bound).hi.unwrap_or(f64::INFINITY) });
    }
    Ok((a1 + lambda * a2 * a2 / (1.0 - lambda * a3)).powi(n as i32))
}

/// `(1 + x) log(1 + x) - x`.
pub fn conjugate_h1(x: f64) -> f64 {
    (1.0 + x) * x.ln_1p() - x
}

/// `1 / (sqrt(1 + x) + x/2 + 1)`.
pub fn conjugate_h2(x: f64) -> f64 {
    1.0 / ((1.0 + x).sqrt() + x / 2.0 + 1.0)
}

/// Lower bound on the convex conjugate at `t`:
/// `t^2 / (2 L^2 (alpha sigma^2 + 2 L t / (1 - lambda)))` for `lambda > 0`
/// and `t^2 / (2 L^2 (sigma^2 + L t / 3))` for `lambda = 0`.
pub fn conjugate_bound(sigma_sq: f64, lambda: f64, l: f64, t: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(l > 0.0) || !(t >= 0.0) {
        return Err(BoundError::InvalidParameter("need L > 0 and t >= 0".into()));
    }
    let denom = if lambda == 0.0 { sigma_sq + l * t / 3.0 } else { alpha(lambda)? * sigma_sq + 2.0 * l * t / (1.0 - lambda) };
    Ok(t * t / (2.0 * l * l * denom))
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`, stopping at
/// an absolute bracket width of `tol` or after `max_iter` steps.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `inf_theta d^{1 - pi/4} exp(-theta t + log M_F(4 theta / pi))` over the
/// admissible range, where `log_mgf` is an upper bound on the log MGF valid
/// on `mgf_domain` (expressed in the MGF's own argument).
pub fn gt_tail_pipeline(log_mgf: impl Fn(f64) -> Result<f64>, mgf_domain: ThetaDomain, d: usize, t: f64) -> Result<BoundReport> {
    if d == 0 || !t.is_finite() {
        return Err(BoundError::InvalidParameter("need d >= 1 and finite t".into()));
    }
    let scale = 4.0 / PI;
    let hi = match mgf_domain.hi {
        Some(h) if h <= 0.0 => return Err(BoundError::EmptyDomain(format!("MGF domain upper end {h}"))),
        Some(h) => h / scale * (1.0 - 1e-9),
        None => {
            // Double until the exponent turns upward, bracketing the minimum.
            let mut hi = 1.0;
            let mut prev = log_mgf(scale * hi)? - hi * t;
            for _ in 0..200 {
                let next = log_mgf(scale * 2.0 * hi)? - 2.0 * hi * t;
                hi *= 2.0;
                if next >= prev {
                    break;
                }
                prev = next;
            }
            hi
        }
    };
    let objective = |theta: f64| log_mgf(scale * theta).map(|l| l - theta * t).unwrap_or(f64::INFINITY);
    let (theta, best) = golden_section_min(objective, 0.0, hi, 1e-10, 200);
    let at_zero = log_mgf(0.0)?;
    let (theta, best) = if at_zero <= best { (0.0, at_zero) } else { (theta, best) };
    let prefactor = (d as f64).powf(1.0 - PI / 4.0);
    Ok(BoundReport {
        value: prefactor * best.exp(),
        theta_used: theta,
        theta_domain: ThetaDomain { lo: 0.0, hi: mgf_domain.hi.map(|h| h / scale) },
        formula_id: "chernoff.pipeline".into(),
        corrections: vec![],
        warnings: vec![],
    })
}

/// Doubles the bound for a complex observable handled through its real
/// embedding. Refuses to apply twice.
pub fn complex_correction(report: &BoundReport) -> Result<BoundReport> {
    if report.corrections.contains(&Correction::ComplexEmbedding) {
        return Err(BoundError::AlreadyApplied("complex embedding".into()));
    }
    let mut out = report.clone();
    out.value *= 2.0;
    out.corrections.push(Correction::ComplexEmbedding);
    Ok(out)
}

/// Multiplies the bound by `||dnu/dpi||_(pi,p)` for a chain started from `nu`.
pub fn nonstationary_correction(report: &BoundReport, nu: &[f64], pi: &[f64], p: f64) -> Result<BoundReport> {
    let factor = radon_nikodym_norm(nu, pi, p).map_err(|e| BoundError::InvalidParameter(e.to_string()))?;
    let q = (p > 1.0).then(|| p / (p - 1.0));
    let mut out = report.clone();
    out.value *= factor;
    out.corrections.push(Correction::Nonstationary { p, q, factor });
    if !out.warnings.iter().any(|w| w == WARN_NONSTATIONARY) {
        out.warnings.push(WARN_NONSTATIONARY.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(0.0).unwrap(), 1.0);
        assert!(close(alpha(1.0 / 3.0).unwrap(), 2.0, 1e-15));
        assert!(close(alpha(0.9).unwrap(), 19.0, 1e-14));
        assert!(alpha(1.0).is_err());
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta(0.0).unwrap(), 4.0 / (3.0 * PI));
        assert!(close(beta(0.5).unwrap(), 16.0 / PI, 1e-15));
        assert!(close(beta(1e-300).unwrap(), 8.0 / PI, 1e-15));
        assert_eq!(beta_branch(0.0).unwrap(), BetaBranch::Independent);
        assert_eq!(beta_branch(1e-300).unwrap(), BetaBranch::Markov);
    }

    #[test]
    fn hoeffding_mgf_examples() {
        let p = HoeffdingParams::new(3, 0.2, vec![(-1.0, 2.0); 4]).unwrap();
        assert_eq!(hoeffding_mgf_bound(&p, 0.0).unwrap(), 3.0);
        let p = HoeffdingParams::new(1, 0.0, vec![(-1.0, 1.0)]).unwrap();
        assert!(close(hoeffding_mgf_bound(&p, 1.0).unwrap(), 0.5f64.exp(), 1e-15));
    }

    #[test]
    fn hoeffding_tail_examples() {
        let p = HoeffdingParams::new(4, 0.3, vec![(-1.0, 1.0); 5]).unwrap();
        assert!(close(hoeffding_tail_bound(&p, 0.0).unwrap().value, tail_prefactor(4), 1e-15));
        for n in [1, 3, 10] {
            let p = HoeffdingParams::new(1, 0.0, vec![(-1.0, 1.0); n]).unwrap();
            for t in [0.5, 1.0, 4.0] {
                let want = (-t * t * PI * PI / (32.0 * n as f64)).exp();
                assert!(close(hoeffding_tail_bound(&p, t).unwrap().value, want, 1e-14));
            }
        }
    }

    #[test]
    fn bernstein_mgf_examples() {
        let p = BernsteinParams::new(2, 0.4, vec![0.5; 3], 1.0).unwrap();
        assert!(close(bernstein_mgf_bound(&p, 0.0).unwrap(), 2.0, 1e-15));
        let p0 = BernsteinParams::new(2, 0.0, vec![0.5; 3], 2.0).unwrap();
        let theta = 0.7;
        let x: f64 = 2.0 * theta;
        let want = 2.0 * ((1.5 / 4.0) * (x.exp() - x - 1.0)).exp();
        assert!(close(bernstein_mgf_bound(&p0, theta).unwrap(), want, 1e-14));
        let limit = (1.0f64 / 0.4).ln();
        assert!(matches!(bernstein_mgf_bound(&p, limit * 1.01), Err(BoundError::Domain { .. })));
    }

    #[test]
    fn bernstein_tail_examples() {
        let p = BernsteinParams::new(3, 0.2, vec![0.5; 4], 1.0).unwrap();
        let r = bernstein_tail_bound(&p, 0.0).unwrap();
        assert!(close(r.value, tail_prefactor(3), 1e-15));
        assert!(r.warnings.iter().any(|w| w == WARN_BERNSTEIN_SIGN));
        for n in [1usize, 5, 20] {
            let p = BernsteinParams::new(2, 0.0, vec![1.0; n], 1.0).unwrap();
            for t in [0.3, 2.0, 7.0] {
                let nn = n as f64;
                let want = tail_prefactor(2) * (-t * t * PI * PI / (32.0 * (nn + 4.0 * t / (3.0 * PI)))).exp();
                assert!(close(bernstein_tail_bound(&p, t).unwrap().value, want, 1e-14));
            }
        }
    }

    #[test]
    fn alphas_examples() {
        assert_eq!(bernstein_alphas(0.7, 2.0, 0.0), (1.0, 0.0, 1.0));
        let e = 1f64.exp();
        let (a1, a2, a3) = bernstein_alphas(1.0, 1.0, 1.0);
        assert!(close(a1, e - 1.0, 1e-15) && close(a2, e - 1.0, 1e-15) && close(a3, e, 1e-15));
        let (v, m, th) = (0.3, 1.5, 0.4);
        let (_, a2, _) = bernstein_alphas(v, m, th);
        assert!(close(a2 * a2, v * ((m * th).exp() - 1.0).powi(2) / (m * m), 1e-14));
    }

    #[test]
    fn recursion_examples() {
        assert_eq!(recursive_norm_bound(0.5, 1.0, 0.3, 0.0, 7).unwrap(), 1.0);
        let (a1, _, _) = bernstein_alphas(0.5, 1.0, 0.8);
        assert!(close(recursive_norm_bound(0.5, 1.0, 0.0, 0.8, 5).unwrap(), a1.powi(5), 1e-14));
        assert!(recursive_norm_bound(0.5, 1.0, 0.5, 1.0, 5).is_err());
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(conjugate_h1(0.0), 0.0);
        assert_eq!(conjugate_h2(0.0), 0.5);
        for k in 0..=1000 {
            let x = k as f64 / 100.0;
            assert!(conjugate_h1(x) >= x * x / (2.0 * (1.0 + x / 3.0)) - 1e-15);
        }
    }

    #[test]
    fn conjugate_reproduces_tail_denominator() {
        let l = 4.0 / PI;
        for lambda in [0.1, 0.5, 0.9] {
            assert!(close(2.0 * l / (1.0 - lambda), beta(lambda).unwrap(), 1e-15));
            let (s, t) = (3.0, 1.7);
            let p = BernsteinParams::new(1, lambda, vec![1.0; 3], 1.0).unwrap();
            let via_tail = -bernstein_tail_bound(&p, t).unwrap().value.ln();
            assert!(close(conjugate_bound(s, lambda, l, t).unwrap(), via_tail, 1e-13));
        }
        assert!(close(2.0 * l * l, 32.0 / (PI * PI), 1e-15));
    }

    #[test]
    fn pipeline_matches_hoeffding_closed_form() {
        let p = HoeffdingParams::new(3, 0.4, vec![(-1.0, 2.0), (-0.5, 0.5)]).unwrap();
        for t in [0.5, 2.0, 6.0] {
            let closed = hoeffding_tail_bound(&p, t).unwrap();
            let piped = gt_tail_pipeline(|th| hoeffding_log_mgf_bound(&p, th), ThetaDomain::POSITIVE, p.d, t).unwrap();
            assert!(close(piped.value, closed.value, 1e-9), "{} vs {}", piped.value, closed.value);
            assert!((piped.theta_used - closed.theta_used).abs() < 1e-6);
        }
    }

    #[test]
    fn pipeline_constant_mgf_returns_boundary() {
        let r = gt_tail_pipeline(|_| Ok(2f64.ln()), ThetaDomain::POSITIVE, 2, -1.0).unwrap();
        assert!(close(r.value, tail_prefactor(2), 1e-12));
        assert_eq!(r.theta_used, 0.0);
    }

    #[test]
    fn pipeline_bernstein_not_above_closed_form() {
        for lambda in [0.0, 0.3, 0.7] {
            let p = BernsteinParams::new(2, lambda, vec![0.4; 6], 1.0).unwrap();
            let dom = bernstein_domain(lambda, p.m_bound);
            for t in [0.5, 1.5, 4.0] {
                let piped = gt_tail_pipeline(|th| bernstein_log_mgf_bound(&p, th), dom, p.d, t).unwrap();
                let closed = bernstein_tail_bound(&p, t).unwrap();
                assert!(piped.value <= closed.value + 1e-9, "lambda {lambda} t {t}: {} > {}", piped.value, closed.value);
            }
        }
    }

    #[test]
    fn corrections() {
        let p = HoeffdingParams::new(2, 0.0, vec![(-1.0, 1.0)]).unwrap();
        let r = hoeffding_tail_bound(&p, 1.0).unwrap();
        let c = complex_correction(&r).unwrap();
        assert_eq!(c.value, 2.0 * r.value);
        assert!(complex_correction(&c).is_err());
        let same = nonstationary_correction(&r, &[0.5, 0.5], &[0.5, 0.5], 2.0).unwrap();
        assert!(close(same.value, r.value, 1e-15));
        assert!(same.warnings.iter().any(|w| w == WARN_NONSTATIONARY));
        let skew = nonstationary_correction(&r, &[1.0, 0.0], &[0.5, 0.5], 2.0).unwrap();
        assert!(close(skew.value, 2f64.sqrt() * r.value, 1e-15));
        let one = nonstationary_correction(&r, &[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap();
        assert!(close(one.value, r.value, 1e-15));
        assert!(nonstationary_correction(&r, &[1.0, 0.0], &[0.5, 0.5], 0.5).is_err());
    }
}
