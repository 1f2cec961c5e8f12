//! Python bindings for the spectral regularizer, its diagnostics and the
//! grid-world training loop.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spqr_core::diagnostics::{self, DetectionCurve};
use spqr_core::rl::{self, RunMetrics, TrainConfig};
use spqr_core::spectral;
use spqr_core::worlds::{generate_dataset, GridWorld, Provenance};
use spqr_core::{eigen, gradcheck, spqr as loss, Error, Spectrum, SymMatrix};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::NoConvergence(_) | Error::DegenerateSpectrum { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Draw a GOE matrix with off-diagonal variance `sigma^2`.
#[pyfunction]
#[pyo3(signature = (dim, sigma = 1.0, seed = 0))]
fn sample_goe(dim: usize, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(spectral::sample_goe(dim, sigma, seed).map_err(to_py)?.to_rows())
}

/// Ascending eigenvalues and the matching eigenvectors (one list per eigenvalue).
#[pyfunction]
fn eigh(matrix: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let x = SymMatrix::from_rows(&matrix).map_err(to_py)?;
    let s = eigen::eigh(&x).map_err(to_py)?;
    let vectors = (0..s.dim()).map(|k| s.eigenvector(k)).collect();
    Ok((s.eigenvalues, vectors))
}

#[pyfunction]
fn eigvalsh(matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let x = SymMatrix::from_rows(&matrix).map_err(to_py)?;
    eigen::eigvalsh(&x).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, sigma = 1.0))]
fn semicircle_pdf(x: f64, sigma: f64) -> f64 {
    spectral::semicircle_pdf(x, sigma)
}

/// Kolmogorov-Smirnov distance between the eigenvalues and the semicircle law.
#[pyfunction]
#[pyo3(signature = (eigenvalues, sigma = 1.0))]
fn ks_distance(eigenvalues: Vec<f64>, sigma: f64) -> PyResult<f64> {
    let s = Spectrum::from_eigenvalues(eigenvalues).map_err(to_py)?;
    Ok(spectral::ks_distance(&s, sigma))
}

/// KL divergence from the soft semicircle and its gradient in the eigenvalues.
#[pyfunction]
#[pyo3(signature = (eigenvalues, rho = spectral::DEFAULT_RHO, eps = spectral::DEFAULT_EPS))]
fn kl_to_semicircle(eigenvalues: Vec<f64>, rho: f64, eps: f64) -> PyResult<(f64, Vec<f64>)> {
    let s = Spectrum::from_eigenvalues(eigenvalues).map_err(to_py)?;
    spectral::kl_to_semicircle(&s, rho, eps).map_err(to_py)
}

/// Spectral loss of one ensemble's Q-values at a state-action pair.
#[pyclass(frozen, get_all)]
struct SpqrLoss {
    loss: f64,
    grad_q: Vec<f64>,
    mu: f64,
    sigma: f64,
    collapsed: bool,
}

#[pymethods]
impl SpqrLoss {
    fn __repr__(&self) -> String {
        format!("SpqrLoss(loss={}, collapsed={})", self.loss, self.collapsed)
    }
}

#[pyfunction]
#[pyo3(signature = (qvals, rho = spectral::DEFAULT_RHO, eps = spectral::DEFAULT_EPS, perm_seed = 0))]
fn spqr_loss(qvals: Vec<f64>, rho: f64, eps: f64, perm_seed: u64) -> PyResult<SpqrLoss> {
    let out = loss::spqr_loss_single(&qvals, rho, eps, perm_seed).map_err(to_py)?;
    Ok(SpqrLoss {
        loss: out.loss,
        grad_q: out.grad_q,
        mu: out.mu,
        sigma: out.sigma,
        collapsed: out.collapsed,
    })
}

/// Pearson correlation matrix of the columns of a (pairs x members) table.
#[pyfunction]
fn pearson_matrix(q_table: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = diagnostics::pearson_matrix(&q_table).map_err(to_py)?;
    let n = q_table.first().map_or(0, Vec::len);
    Ok((0..n).map(|i| (0..n).map(|j| c.get(i, j)).collect()).collect())
}

/// `(statistic, dof, p_value, accept)` of the chi-square uniformity test.
#[pyfunction]
#[pyo3(signature = (samples, bins, alpha = 0.025))]
fn chi2_uniform(samples: Vec<f64>, bins: usize, alpha: f64) -> PyResult<(f64, usize, f64, bool)> {
    let r = diagnostics::chi2_uniform(&samples, bins, alpha).map_err(to_py)?;
    Ok((r.statistic, r.dof, r.p_value, r.accept))
}

/// `(statistic, dof, p_value, accept)` of the chi-square independence test.
#[pyfunction]
#[pyo3(signature = (x, y, bins, alpha = 0.025))]
fn chi2_independence(x: Vec<f64>, y: Vec<f64>, bins: usize, alpha: f64) -> PyResult<(f64, usize, f64, bool)> {
    let r = diagnostics::chi2_independence(&x, &y, bins, alpha).map_err(to_py)?;
    Ok((r.statistic, r.dof, r.p_value, r.accept))
}

#[pyfunction]
fn optimal_detection_error(psi: f64) -> f64 {
    diagnostics::optimal_detection_error(psi)
}

fn curve_dict<'py>(py: Python<'py>, c: &DetectionCurve) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("psi", c.psi_grid.clone())?;
    d.set_item("empirical_error", c.empirical_error.clone())?;
    d.set_item("erfc_reference", c.erfc_reference.clone())?;
    d.set_item("std_error", c.std_error.clone())?;
    d.set_item("kl_threshold", c.kl_threshold)?;
    Ok(d)
}

/// Error of the KL spike test against the best achievable error, per psi.
#[pyfunction]
#[pyo3(signature = (psi_grid, n_dim = 256, trials = 2000, seed = 0, kl_threshold = None))]
fn detection_experiment<'py>(
    py: Python<'py>,
    psi_grid: Vec<f64>,
    n_dim: usize,
    trials: usize,
    seed: u64,
    kl_threshold: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let c = py
        .detach(|| diagnostics::detection_experiment(&psi_grid, n_dim, trials, kl_threshold, seed))
        .map_err(to_py)?;
    curve_dict(py, &c)
}

fn metrics_dict<'py>(py: Python<'py>, m: &RunMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", m.step)?;
    d.set_item("avg_return", m.avg_return)?;
    d.set_item("q_mean", m.q_mean)?;
    d.set_item("q_std", m.q_std)?;
    d.set_item("bias_mean", m.bias_mean)?;
    d.set_item("bias_std", m.bias_std)?;
    d.set_item("spike_count", m.spike_count)?;
    d.set_item("chi2_accept_ratio", m.chi2_accept_ratio)?;
    d.set_item("mean_abs_corr", m.mean_abs_corr)?;
    d.set_item("loss_q", m.loss_q)?;
    d.set_item("loss_spqr", m.loss_spqr)?;
    d.set_item("beta", m.beta)?;
    Ok(d)
}

/// Train a Q-ensemble on the grid world.
///
/// `config` and `world` are JSON objects with the same keys as the CLI's
/// `train` and `world` sections. Offline runs take a generated dataset
/// `(provenance, size, seed)`. Returns one dict per evaluation; a numerical
/// abort raises `ArithmeticError`.
#[pyfunction]
#[pyo3(signature = (config = "{}", world = "{}", dataset = None))]
fn train<'py>(
    py: Python<'py>,
    config: &str,
    world: &str,
    dataset: Option<(String, usize, u64)>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: TrainConfig = parse(config)?;
    let world: GridWorld = parse(world)?;
    let data = match dataset {
        Some((prov, size, seed)) => {
            let prov: Provenance = parse(&format!("\"{prov}\""))?;
            Some(generate_dataset(&world, prov, size, seed).map_err(to_py)?)
        }
        None => None,
    };
    let out = py.detach(|| rl::train(&cfg, &world, data.as_ref())).map_err(to_py)?;
    if let Some(abort) = out.abort {
        return Err(PyArithmeticError::new_err(format!(
            "training aborted at step {}: {}",
            abort.step, abort.reason
        )));
    }
    out.metrics.iter().map(|m| metrics_dict(py, m)).collect()
}

/// Finite-difference checks of every analytic gradient: `{suite: (max_rel_error, passed)}`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn run_gradcheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = py.detach(|| gradcheck::run_all(seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    for s in &report.suites {
        d.set_item(&s.name, (s.max_rel_error, s.passed))?;
    }
    Ok(d)
}

#[pymodule]
fn spqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", spqr_core::VERSION)?;
    m.add("SPIKE_THRESHOLD_PSI", spectral::SPIKE_THRESHOLD_PSI)?;
    m.add_class::<SpqrLoss>()?;
    m.add_function(wrap_pyfunction!(sample_goe, m)?)?;
    m.add_function(wrap_pyfunction!(eigh, m)?)?;
    m.add_function(wrap_pyfunction!(eigvalsh, m)?)?;
    m.add_function(wrap_pyfunction!(semicircle_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(ks_distance, m)?)?;
    m.add_function(wrap_pyfunction!(kl_to_semicircle, m)?)?;
    m.add_function(wrap_pyfunction!(spqr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_independence, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_detection_error, m)?)?;
    m.add_function(wrap_pyfunction!(detection_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    Ok(())
}
