//! Python bindings for `mmconc`.

use mmconc::bounds::{self, BernsteinParams, BoundReport, HoeffdingParams};
use mmconc::chain::{self, FiniteChain, InitialDistribution};
use mmconc::lift::{self, ObservableSequence};
use mmconc::matcore::SymmetricMatrix;
use mmconc::mc::{self, EstimateWithCI, VerifyConfig};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn symmetric(rows: &[Vec<f64>]) -> PyResult<SymmetricMatrix> {
    SymmetricMatrix::new(matrix(rows)?).map_err(err)
}

fn initial(nu: Option<Vec<f64>>) -> InitialDistribution {
    nu.map_or(InitialDistribution::Stationary, InitialDistribution::Custom)
}

/// Finite ergodic Markov chain given by its transition matrix.
#[pyclass(name = "Chain", module = "pymmconc", frozen)]
struct PyChain(FiniteChain);

#[pymethods]
impl PyChain {
    #[new]
    fn new(p: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyChain(chain::validate_chain(matrix(&p)?).map_err(err)?))
    }

    /// `lam I + (1 - lam) 1 pi^T`, whose absolute spectral gap is `lam`.
    #[staticmethod]
    fn leon_perron(pi: Vec<f64>, lam: f64) -> PyResult<Self> {
        Ok(PyChain(chain::leon_perron(&pi, lam).map_err(err)?))
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.0.pi().to_vec()
    }

    /// Operator norm of `P - 1 pi^T` on `l2(pi)`.
    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.0.p())
    }

    #[pyo3(signature = (n, seed, nu = None))]
    fn sample(&self, n: usize, seed: u64, nu: Option<Vec<f64>>) -> PyResult<Vec<usize>> {
        Ok(chain::sample_trajectory(&self.0, n, seed, &initial(nu)).map_err(err)?.states)
    }

    fn __repr__(&self) -> String {
        format!("Chain(m={}, lam={:.6})", self.0.m(), self.0.lambda())
    }
}

/// Sequence `F_1, ..., F_n` of maps from states to symmetric `d x d` matrices.
#[pyclass(name = "Observable", module = "pymmconc", frozen)]
struct PyObservable(ObservableSequence);

#[pymethods]
impl PyObservable {
    /// One matrix per state, reused at each of the `n` steps.
    #[new]
    fn new(maps: Vec<Vec<Vec<f64>>>, n: usize) -> PyResult<Self> {
        let maps = maps.iter().map(|m| symmetric(m)).collect::<PyResult<Vec<_>>>()?;
        Ok(PyObservable(ObservableSequence::time_independent(maps, n).map_err(err)?))
    }

    /// `maps[j][x]` is the matrix at step `j` in state `x`.
    #[staticmethod]
    fn time_dependent(maps: Vec<Vec<Vec<Vec<f64>>>>) -> PyResult<Self> {
        let maps = maps
            .iter()
            .map(|step| step.iter().map(|m| symmetric(m)).collect::<PyResult<Vec<_>>>())
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyObservable(ObservableSequence::time_dependent(maps).map_err(err)?))
    }

    /// `f(x) I_d` at every step.
    #[staticmethod]
    fn scalar(f: Vec<f64>, d: usize, n: usize) -> PyResult<Self> {
        Ok(PyObservable(ObservableSequence::scalar(&f, d, n).map_err(err)?))
    }

    /// Random family centered under `pi`, entries drawn from `[-scale, scale]`.
    #[staticmethod]
    #[pyo3(signature = (pi, d, n, seed, scale = 1.0))]
    fn random(pi: Vec<f64>, d: usize, n: usize, seed: u64, scale: f64) -> PyResult<Self> {
        let mut rng = chain::trial_rng(seed, 0);
        let fam = lift::random_mean_zero_family(&mut rng, &pi, d, scale);
        Ok(PyObservable(ObservableSequence::time_independent(fam, n).map_err(err)?))
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    fn at(&self, j: usize, x: usize) -> PyResult<Vec<Vec<f64>>> {
        if j >= self.0.n() || x >= self.0.m() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(rows(self.0.at(j, x).as_matrix()))
    }

    /// Smallest `(a_j, b_j)` with `a_j I <= F_j(x) <= b_j I`.
    fn ranges(&self) -> Vec<(f64, f64)> {
        self.0.tight_ranges()
    }

    /// Per-step variance proxies and the uniform bound `M`.
    fn bernstein_proxies(&self, pi: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let b = self.0.tight_bernstein(&pi).map_err(err)?;
        Ok((b.variances, b.m_bound))
    }

    fn __repr__(&self) -> String {
        format!("Observable(m={}, d={}, n={})", self.0.m(), self.0.d(), self.0.n())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("value", r.value)?;
    out.set_item("theta_used", r.theta_used)?;
    out.set_item("theta_max", r.theta_domain.hi)?;
    out.set_item("formula_id", &r.formula_id)?;
    out.set_item("warnings", r.warnings.clone())?;
    Ok(out)
}

fn estimate_dict<'py>(py: Python<'py>, e: &EstimateWithCI) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("point", e.point)?;
    out.set_item("ci_low", e.ci_low)?;
    out.set_item("ci_high", e.ci_high)?;
    out.set_item("trials", e.trials)?;
    out.set_item("seed", e.seed)?;
    Ok(out)
}

fn check_sizes(chain: &PyChain, obs: &PyObservable) -> PyResult<()> {
    if chain.0.m() != obs.0.m() {
        return Err(PyValueError::new_err("chain and observable disagree on the number of states"));
    }
    Ok(())
}

/// `E[||prod_j exp(theta e^{i phi}/2 F_j(s_j))||_F^2]`, exactly.
#[pyfunction]
#[pyo3(signature = (chain, obs, theta, phi = 0.0, nu = None))]
fn exact_mgf(chain: &PyChain, obs: &PyObservable, theta: f64, phi: f64, nu: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(exact_log_mgf(chain, obs, theta, phi, nu)?.exp())
}

#[pyfunction]
#[pyo3(signature = (chain, obs, theta, phi = 0.0, nu = None))]
fn exact_log_mgf(chain: &PyChain, obs: &PyObservable, theta: f64, phi: f64, nu: Option<Vec<f64>>) -> PyResult<f64> {
    check_sizes(chain, obs)?;
    let nu = nu.unwrap_or_else(|| chain.0.pi().to_vec());
    lift::exact_log_mgf_from(&chain.0, &obs.0, theta, phi, &nu).map_err(err)
}

/// Exact `Pr(lambda_max(sum_j F_j(s_j)) >= t)` by path enumeration.
#[pyfunction]
fn exact_tail(chain: &PyChain, obs: &PyObservable, t: f64) -> PyResult<f64> {
    mmconc::oracle::path_tail(&chain.0, &obs.0, t).map_err(err)
}

#[pyfunction]
fn alpha(lam: f64) -> PyResult<f64> {
    bounds::alpha(lam).map_err(err)
}

#[pyfunction]
fn beta(lam: f64) -> PyResult<f64> {
    bounds::beta(lam).map_err(err)
}

#[pyfunction]
fn hoeffding_mgf_bound(d: usize, lam: f64, ranges: Vec<(f64, f64)>, theta: f64) -> PyResult<f64> {
    let p = HoeffdingParams::new(d, lam, ranges).map_err(err)?;
    bounds::hoeffding_mgf_bound(&p, theta).map_err(err)
}

#[pyfunction]
fn hoeffding_tail_bound<'py>(
    py: Python<'py>,
    d: usize,
    lam: f64,
    ranges: Vec<(f64, f64)>,
    t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = HoeffdingParams::new(d, lam, ranges).map_err(err)?;
    report_dict(py, &bounds::hoeffding_tail_bound(&p, t).map_err(err)?)
}

#[pyfunction]
fn bernstein_mgf_bound(d: usize, lam: f64, variances: Vec<f64>, m_bound: f64, theta: f64) -> PyResult<f64> {
    let p = BernsteinParams::new(d, lam, variances, m_bound).map_err(err)?;
    bounds::bernstein_mgf_bound(&p, theta).map_err(err)
}

#[pyfunction]
fn bernstein_tail_bound<'py>(
    py: Python<'py>,
    d: usize,
    lam: f64,
    variances: Vec<f64>,
    m_bound: f64,
    t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = BernsteinParams::new(d, lam, variances, m_bound).map_err(err)?;
    report_dict(py, &bounds::bernstein_tail_bound(&p, t).map_err(err)?)
}

/// Chernoff bound on the tail from the exact MGF of `obs` under `chain`.
#[pyfunction]
fn exact_chernoff_tail<'py>(py: Python<'py>, chain: &PyChain, obs: &PyObservable, t: f64) -> PyResult<Bound<'py, PyDict>> {
    check_sizes(chain, obs)?;
    let log_mgf =
        |s: f64| lift::exact_log_mgf(&chain.0, &obs.0, s, 0.0).map_err(|e| bounds::BoundError::InvalidParameter(e.to_string()));
    let r = bounds::gt_tail_pipeline(log_mgf, bounds::ThetaDomain::POSITIVE, obs.0.d(), t).map_err(err)?;
    report_dict(py, &r)
}

/// Largest eigenvalue of the sandwich operator for the Leon-Perron kernel.
#[pyfunction]
#[pyo3(signature = (pi, lam, maps, theta, phi = 0.0))]
fn leading_eigenvalue(pi: Vec<f64>, lam: f64, maps: Vec<Vec<Vec<f64>>>, theta: f64, phi: f64) -> PyResult<f64> {
    let fam = maps.iter().map(|m| symmetric(m)).collect::<PyResult<Vec<_>>>()?;
    let ts = lift::build_t_family(&fam, phi);
    Ok(lift::leading_eigenvalue_sandwich(&pi, lam, &ts, theta).map_err(err)?.leading_eigenvalue)
}

#[pyfunction]
#[pyo3(signature = (chain, obs, ts, trials, seed, nu = None))]
fn estimate_tails<'py>(
    py: Python<'py>,
    chain: &PyChain,
    obs: &PyObservable,
    ts: Vec<f64>,
    trials: usize,
    seed: u64,
    nu: Option<Vec<f64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    check_sizes(chain, obs)?;
    let est = py.detach(|| mc::estimate_tails(&chain.0, &obs.0, &initial(nu), &ts, trials, seed, mc::Z95)).map_err(err)?;
    est.iter().map(|e| estimate_dict(py, e)).collect()
}

#[pyfunction]
#[pyo3(signature = (chain, obs, theta, trials, seed, phi = 0.0, nu = None))]
#[allow(clippy::too_many_arguments)]
fn estimate_mgf<'py>(
    py: Python<'py>,
    chain: &PyChain,
    obs: &PyObservable,
    theta: f64,
    trials: usize,
    seed: u64,
    phi: f64,
    nu: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    check_sizes(chain, obs)?;
    let est =
        py.detach(|| mc::estimate_mgf_with(&chain.0, &obs.0, &initial(nu), theta, phi, trials, seed, mc::Z95)).map_err(err)?;
    estimate_dict(py, &est)
}

/// Runs the randomized inequality suite and returns one dict per check.
#[pyfunction]
#[pyo3(signature = (suite_size = 10, seed = 0, trials = 4000))]
fn verify<'py>(py: Python<'py>, suite_size: usize, seed: u64, trials: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = VerifyConfig { tail_trials: trials, majorization_trials: trials, ..Default::default() };
    let suite = mc::default_suite(suite_size, seed);
    let records = py.detach(|| mc::verify_all(&suite, seed, &config)).map_err(err)?;
    records
        .iter()
        .map(|r| {
            let out = PyDict::new(py);
            out.set_item("inequality_id", &r.inequality_id)?;
            out.set_item("instances_tested", r.instances_tested)?;
            out.set_item("violations", r.violations)?;
            out.set_item("worst_margin", r.worst_margin)?;
            out.set_item("worst_seed", r.worst_seed)?;
            out.set_item("informational", r.informational)?;
            out.set_item("passed", r.passed())?;
            Ok(out)
        })
        .collect()
}

#[pymodule]
fn pymmconc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_class::<PyObservable>()?;
    m.add_function(wrap_pyfunction!(exact_mgf, m)?)?;
    m.add_function(wrap_pyfunction!(exact_log_mgf, m)?)?;
    m.add_function(wrap_pyfunction!(exact_tail, m)?)?;
    m.add_function(wrap_pyfunction!(exact_chernoff_tail, m)?)?;
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_mgf_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_mgf_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(leading_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tails, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mgf, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
