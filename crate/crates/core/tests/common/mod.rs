//! Test-side oracles. They use different algorithms from the library
//! (odometer enumeration, Pade exponentials, power iteration) so that
//! agreement is evidence rather than tautology.

#![allow(dead_code)]

use mmconc::chain::FiniteChain;
use mmconc::lift::ObservableSequence;
use mmconc::C64;
use nalgebra::DMatrix;

/// Padé exponential of `z F` from nalgebra.
pub fn pade_exp(f: &DMatrix<f64>, z: C64) -> DMatrix<C64> {
    f.map(|x| z * x).exp()
}

/// Visits every path `(s_1, ..., s_n)` with its probability under the
/// chain started at `init`.
pub fn for_each_path(p: &DMatrix<f64>, init: &[f64], n: usize, mut visit: impl FnMut(&[usize], f64)) {
    let m = init.len();
    let mut path = vec![0usize; n];
    loop {
        let mut prob = init[path[0]];
        for w in path.windows(2) {
            prob *= p[(w[0], w[1])];
        }
        if prob > 0.0 {
            visit(&path, prob);
        }
        // Odometer increment, last coordinate fastest.
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < m {
                break;
            }
            path[k] = 0;
        }
    }
}

/// `E[||prod_j exp(theta e^{i phi}/2 F_j(s_j))||_F^2]` by enumeration.
pub fn enumerate_mgf(chain: &FiniteChain, obs: &ObservableSequence, theta: f64, phi: f64) -> f64 {
    let z = C64::from_polar(theta / 2.0, phi);
    let (n, m, d) = (obs.n(), obs.m(), obs.d());
    let factors: Vec<Vec<DMatrix<C64>>> =
        (0..n).map(|j| (0..m).map(|x| pade_exp(obs.at(j, x).as_matrix(), z)).collect()).collect();
    let mut total = 0.0;
    for_each_path(chain.p(), chain.pi(), n, |path, prob| {
        let mut acc = DMatrix::<C64>::identity(d, d);
        for (j, &x) in path.iter().enumerate() {
            acc *= &factors[j][x];
        }
        total += prob * acc.iter().map(|c| c.norm_sqr()).sum::<f64>();
    });
    total
}

/// `Pr(lambda_max(sum_j F_j(s_j)) >= t)` by enumeration.
pub fn enumerate_tail(chain: &FiniteChain, obs: &ObservableSequence, t: f64) -> f64 {
    let d = obs.d();
    let mut total = 0.0;
    for_each_path(chain.p(), chain.pi(), obs.n(), |path, prob| {
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for (j, &x) in path.iter().enumerate() {
            acc += obs.at(j, x).as_matrix();
        }
        if nalgebra::SymmetricEigen::new(acc).eigenvalues.max() >= t {
            total += prob;
        }
    });
    total
}

/// `E_pi[exp(c sum_j f(s_j))]` via the row-vector recursion
/// `u <- u diag(e^{c f}) P`, the transpose of the library's direction.
pub fn scalar_mgf(chain: &FiniteChain, f: &[f64], c: f64, n: usize) -> f64 {
    let m = f.len();
    let w: Vec<f64> = f.iter().map(|v| (c * v).exp()).collect();
    let mut u: Vec<f64> = (0..m).map(|x| chain.pi()[x] * w[x]).collect();
    for _ in 1..n {
        u = (0..m).map(|y| w[y] * (0..m).map(|x| u[x] * chain.p()[(x, y)]).sum::<f64>()).collect();
    }
    u.iter().sum()
}

/// Stationary vector by repeated squaring of `P`. Rows are renormalized
/// each round since squaring doubles any row-sum drift.
pub fn power_stationary(p: &DMatrix<f64>) -> Vec<f64> {
    let mut q = p.clone();
    for _ in 0..60 {
        q = &q * &q;
        for mut row in q.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
    }
    q.row(0).iter().copied().collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
