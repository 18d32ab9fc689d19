//! Brute-force evaluation over all `m^n` state paths. Only usable on tiny
//! instances; it shares no code with the lifted evaluation in [`crate::lift`]
//! and serves as its cross-check.

use nalgebra::DMatrix;

use crate::chain::FiniteChain;
use crate::lift::{LiftError, ObservableSequence, Result};
use crate::matcore::{CMatrix, SymmetricMatrix};
use crate::C64;

/// Largest number of paths the oracle will enumerate.
pub const MAX_PATHS: f64 = 2e7;

fn check_size(chain: &FiniteChain, obs: &ObservableSequence) -> Result<()> {
    if chain.m() != obs.m() {
        return Err(LiftError::InvalidArgument("chain and observable disagree on the number of states".into()));
    }
    let paths = (chain.m() as f64).powi(obs.n() as i32);
    if paths > MAX_PATHS {
        return Err(LiftError::InvalidArgument(format!("{paths} paths exceed the enumeration limit {MAX_PATHS}")));
    }
    Ok(())
}

struct Walk<'a, A> {
    chain: &'a FiniteChain,
    n: usize,
    step: &'a dyn Fn(&A, usize, usize) -> A,
    leaf: &'a mut dyn FnMut(&A, f64),
}

impl<A> Walk<'_, A> {
    fn go(&mut self, j: usize, prev: usize, prob: f64, acc: &A) {
        if j == self.n {
            (self.leaf)(acc, prob);
            return;
        }
        for x in 0..self.chain.m() {
            let p = prob * self.chain.p()[(prev, x)];
            if p > 0.0 {
                let next = (self.step)(acc, j, x);
                self.go(j + 1, x, p, &next);
            }
        }
    }
}

/// Depth-first walk over all paths, carrying a per-prefix accumulator.
fn walk<A>(
    chain: &FiniteChain,
    n: usize,
    init: &[f64],
    start: A,
    step: &impl Fn(&A, usize, usize) -> A,
    leaf: &mut impl FnMut(&A, f64),
) {
    let mut w = Walk { chain, n, step, leaf };
    for (x, &p) in init.iter().enumerate() {
        if p > 0.0 {
            let first = (w.step)(&start, 0, x);
            w.go(1, x, p, &first);
        }
    }
}

/// `sum_paths nu(s_1) prod P(s_j, s_{j+1}) ||prod_j exp(theta e^{i phi}/2 F_j(s_j))||_F^2`.
pub fn path_mgf_from(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64, nu: &[f64]) -> Result<f64> {
    check_size(chain, obs)?;
    let z = C64::from_polar(theta / 2.0, phi);
    let factors: Vec<Vec<CMatrix>> =
        (0..obs.n()).map(|j| obs.family(j).iter().map(|f| complex_exp_by_eig(f, z)).collect()).collect();
    let d = obs.d();
    let mut total = 0.0;
    walk(chain, obs.n(), nu, CMatrix::identity(d, d), &|acc: &CMatrix, j, x| acc * &factors[j][x], &mut |acc: &CMatrix, prob| {
        total += prob * acc.iter().map(|z| z.norm_sqr()).sum::<f64>()
    });
    Ok(total)
}

pub fn path_mgf(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64) -> Result<f64> {
    path_mgf_from(chain, obs, theta, phi, chain.pi())
}

/// `Pr_pi(lambda_max(sum_j F_j(s_j)) >= t)`.
pub fn path_tail(chain: &FiniteChain, obs: &ObservableSequence, t: f64) -> Result<f64> {
    let mut out = path_tails(chain, obs, &[t])?;
    Ok(out.remove(0))
}

/// Exact tails for several thresholds in one enumeration.
pub fn path_tails(chain: &FiniteChain, obs: &ObservableSequence, ts: &[f64]) -> Result<Vec<f64>> {
    check_size(chain, obs)?;
    let d = obs.d();
    let mut out = vec![0.0; ts.len()];
    walk(
        chain,
        obs.n(),
        chain.pi(),
        DMatrix::<f64>::zeros(d, d),
        &|acc: &DMatrix<f64>, j, x| acc + obs.at(j, x).as_matrix(),
        &mut |acc: &DMatrix<f64>, prob| {
            let top = SymmetricMatrix::symmetrize(acc.clone()).lambda_max();
            for (o, &t) in out.iter_mut().zip(ts) {
                if top >= t {
                    *o += prob;
                }
            }
        },
    );
    Ok(out)
}

/// `E_pi[exp(c sum_j f(s_j))]` for a scalar function, by the transfer
/// recursion `v <- diag(e^{c f}) P v`.
pub fn scalar_transfer_mgf(chain: &FiniteChain, f: &[f64], c: f64, n: usize) -> f64 {
    let m = chain.m();
    let w: Vec<f64> = f.iter().map(|&v| (c * v).exp()).collect();
    let mut v = w.clone();
    for _ in 1..n {
        v = (0..m).map(|x| w[x] * (0..m).map(|y| chain.p()[(x, y)] * v[y]).sum::<f64>()).collect();
    }
    chain.pi().iter().zip(&v).map(|(p, x)| p * x).sum()
}

/// `exp(z S)` through the eigendecomposition, kept local so the oracle does
/// not depend on the lifted code path.
fn complex_exp_by_eig(s: &SymmetricMatrix, z: C64) -> CMatrix {
    let eig = nalgebra::SymmetricEigen::new(s.as_matrix().clone());
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let diag = eig.eigenvalues.map(|l| (z * l).exp());
    &v * CMatrix::from_diagonal(&diag) * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::leon_perron;

    #[test]
    fn scalar_iid_mgf_factorizes() {
        let c = leon_perron(&[0.5, 0.5], 0.0).unwrap();
        let got = scalar_transfer_mgf(&c, &[1.0, -1.0], 0.7, 4);
        assert!((got - 0.7f64.cosh().powi(4)).abs() < 1e-14);
    }

    #[test]
    fn path_mgf_zero_theta() {
        let c = leon_perron(&[0.2, 0.8], 0.5).unwrap();
        let obs = ObservableSequence::scalar(&[0.8, -0.2], 3, 4).unwrap();
        assert!((path_mgf(&c, &obs, 0.0, 0.0).unwrap() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn tail_extremes() {
        let c = leon_perron(&[0.5, 0.5], 0.3).unwrap();
        let obs = ObservableSequence::scalar(&[1.0, -1.0], 1, 4).unwrap();
        let t = path_tails(&c, &obs, &[-10.0, 10.0, 4.0]).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-14);
        assert_eq!(t[1], 0.0);
        // All four steps at +1: stay in state 0 three times.
        let want = 0.5 * (0.3 + 0.7 * 0.5f64).powi(3);
        assert!((t[2] - want).abs() < 1e-14);
    }

    #[test]
    fn refuses_huge_enumeration() {
        let c = leon_perron(&[0.25; 4], 0.3).unwrap();
        let obs = ObservableSequence::scalar(&[1.0, -1.0, 0.5, -0.5], 1, 20).unwrap();
        assert!(path_mgf(&c, &obs, 1.0, 0.0).is_err());
    }
}
