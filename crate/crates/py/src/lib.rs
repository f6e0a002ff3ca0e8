//! Python bindings for `noisesched`.
//!
//! Matrices cross the boundary as lists of rows. Structured results (run
//! records, analyses, experiment reports) come back as plain dicts.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use noisesched::accountant::{self, StepCost};
use noisesched::analysis::{self, ProblemSpec};
use noisesched::harness::{self, ExperimentConfig};
use noisesched::influence;
use noisesched::models::{self, Dataset, LossKind};
use noisesched::optimizer::{self, NoiseMode, RunConfig, StepSize};
use noisesched::schedules::{self, NoiseSchedule};
use noisesched::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Parse { .. } | Error::Json(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn dp_to_zcdp(epsilon: f64, delta: f64) -> PyResult<f64> {
    accountant::dp_to_zcdp(epsilon, delta).map_err(to_py)
}

#[pyfunction]
fn zcdp_to_dp(rho: f64, delta: f64) -> PyResult<f64> {
    accountant::zcdp_to_dp(rho, delta).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (sigma, sample_rate=1.0))]
fn step_cost(sigma: f64, sample_rate: f64) -> PyResult<f64> {
    accountant::subsampled_step_cost(sigma, sample_rate).map_err(to_py)
}

/// Residual-budget ledger in R-units.
#[pyclass(name = "PrivacyLedger")]
struct PyLedger {
    inner: accountant::PrivacyLedger,
}

#[pymethods]
impl PyLedger {
    #[new]
    fn new(total: f64) -> PyResult<Self> {
        Ok(Self { inner: accountant::PrivacyLedger::new(total).map_err(to_py)? })
    }

    /// Asks for one step at noise `sigma`; returns whether it was granted.
    #[pyo3(signature = (sigma, sample_rate=1.0))]
    fn request(&mut self, sigma: f64, sample_rate: f64) -> PyResult<bool> {
        let cost = StepCost::subsampled(sigma, sample_rate).map_err(to_py)?;
        Ok(self.inner.request(cost).is_granted())
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual()
    }

    #[getter]
    fn spent(&self) -> f64 {
        self.inner.spent_r_units()
    }

    #[getter]
    fn zcdp_rho(&self) -> f64 {
        self.inner.zcdp_rho()
    }

    fn __repr__(&self) -> String {
        format!("PrivacyLedger(total={}, spent={})", self.inner.total(), self.inner.spent_r_units())
    }
}

#[pyfunction]
#[pyo3(name = "uniform_schedule")]
fn py_uniform_schedule(t: usize, r: f64) -> PyResult<Vec<f64>> {
    Ok(schedules::uniform_schedule(t, r).map_err(to_py)?.sigmas().to_vec())
}

#[pyfunction]
#[pyo3(name = "gd_closed_form")]
fn py_gd_closed_form(gamma: f64, t: usize, r: f64) -> PyResult<Vec<f64>> {
    Ok(schedules::gd_closed_form(gamma, t, r).map_err(to_py)?.sigmas().to_vec())
}

#[pyfunction]
#[pyo3(name = "dynamic_from_influence")]
fn py_dynamic_from_influence(q: Vec<f64>, r: f64) -> PyResult<Vec<f64>> {
    Ok(schedules::dynamic_from_influence(&q, r).map_err(to_py)?.sigmas().to_vec())
}

#[pyfunction]
#[pyo3(name = "momentum_dynamic")]
fn py_momentum_dynamic(gamma: f64, beta: f64, t: usize, r: f64) -> PyResult<Vec<f64>> {
    Ok(schedules::momentum_dynamic(gamma, beta, t, r).map_err(to_py)?.sigmas().to_vec())
}

/// Returns `(sigma0, k, rescaled_sigmas)`.
#[pyfunction]
#[pyo3(name = "fit_exponential")]
fn py_fit_exponential(sigmas: Vec<f64>, r: f64) -> PyResult<(f64, f64, Vec<f64>)> {
    let target = NoiseSchedule::custom(sigmas, r).map_err(to_py)?;
    let fit = schedules::fit_exponential(&target).map_err(to_py)?;
    Ok((fit.sigma0, fit.k, fit.schedule.sigmas().to_vec()))
}

#[pyfunction]
fn dynamic_advantage(q: Vec<f64>) -> PyResult<f64> {
    influence::dynamic_advantage(&q).map_err(to_py)
}

/// Largest `t` with `gamma^(t-1) >= (1 - beta) / (1 - beta^t)`.
#[pyfunction]
fn compute_t_hat(gamma: f64, beta: f64) -> usize {
    analysis::compute_t_hat(gamma, beta).value
}

/// Bounds for a problem given as a dict with keys `G, M, mu, D, N, R, init_gap`
/// and optionally `beta`.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, problem: Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (problem,))?.extract()?;
    let spec: ProblemSpec = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_dict(py, &analysis::analyze(&spec).map_err(to_py)?)
}

/// Returns `(features, labels)` as lists.
#[pyfunction]
#[pyo3(signature = (d, n, distance=10.0, seed=0))]
fn gen_synthetic(d: usize, n: usize, distance: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let data = harness::gen_synthetic(d, n, distance, seed).map_err(to_py)?;
    let x = data.features().outer_iter().map(|r| r.to_vec()).collect();
    Ok((x, data.labels().map(|y| y.to_vec()).unwrap_or_default()))
}

/// Loss model over an in-memory dataset.
#[pyclass(name = "LossModel")]
struct PyLossModel {
    inner: models::LossModel,
}

#[pymethods]
impl PyLossModel {
    /// `kind` is `"quadratic"` or `"logistic"`. `scale` standardizes the
    /// features and rescales them to that maximum row norm first.
    #[new]
    #[pyo3(signature = (kind, features, labels=None, clip=Some(4.0), scale=None))]
    fn new(
        kind: &str,
        features: Vec<Vec<f64>>,
        labels: Option<Vec<f64>>,
        clip: Option<f64>,
        scale: Option<f64>,
    ) -> PyResult<Self> {
        let kind: LossKind = kind.parse().map_err(to_py)?;
        let mut data = Dataset::new(matrix(features)?, labels.map(Array1::from)).map_err(to_py)?;
        if let Some(s) = scale {
            data = harness::preprocess(&data, s).map_err(to_py)?;
        }
        Ok(Self { inner: models::LossModel::new(kind, Arc::new(data), clip).map_err(to_py)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.check(&theta)?;
        Ok(self.inner.loss(Array1::from(theta).view()))
    }

    fn gradient(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&theta)?;
        Ok(self.inner.gradient(Array1::from(theta).view()).to_vec())
    }

    fn clipped_gradient(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&theta)?;
        Ok(self.inner.clipped_mean_gradient(Array1::from(theta).view()).to_vec())
    }

    fn smoothness(&self) -> PyResult<f64> {
        self.inner.smoothness_bound().map_err(to_py)
    }

    /// `(m_max, mu_min)` of the quadratic loss.
    fn spectrum(&self) -> PyResult<(f64, f64)> {
        let s = self.inner.estimate_spectrum().map_err(to_py)?;
        Ok((s.m_max, s.mu_min))
    }

    /// One private run. `eta` defaults to `1/M`; `budget` to the schedule's own cost.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (sigmas, eta=None, seed=0, beta=0.0, budget=None, noise=true))]
    fn train<'py>(
        &self,
        py: Python<'py>,
        sigmas: Vec<f64>,
        eta: Option<f64>,
        seed: u64,
        beta: f64,
        budget: Option<f64>,
        noise: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let total: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
        let budget = budget.unwrap_or(total / (1.0 - schedules::PLANNING_HEADROOM));
        let schedule = NoiseSchedule::custom(sigmas, budget).map_err(to_py)?;
        let eta = match eta {
            Some(e) => e,
            None => 1.0 / self.inner.smoothness_bound().map_err(to_py)?,
        };
        let mode = if noise { NoiseMode::Gaussian } else { NoiseMode::Zero };
        let cfg = RunConfig::new(StepSize::Constant(eta), seed).beta(beta).noise(mode);
        let rec = py.detach(|| optimizer::run(&self.inner, &schedule, &cfg)).map_err(to_py)?;
        let out = to_dict(py, &rec)?;
        out.set_item("theta", rec.theta.to_vec())?;
        Ok(out)
    }
}

impl PyLossModel {
    fn check(&self, theta: &[f64]) -> PyResult<()> {
        if theta.len() == self.inner.dim() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("theta has length {}, model has {}", theta.len(), self.inner.dim())))
        }
    }
}

/// Runs an experiment from a JSON config string and returns the report.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(to_py)?;
    let report = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
fn noisesched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dp_to_zcdp, m)?)?;
    m.add_function(wrap_pyfunction!(zcdp_to_dp, m)?)?;
    m.add_function(wrap_pyfunction!(step_cost, m)?)?;
    m.add_function(wrap_pyfunction!(py_uniform_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(py_gd_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(py_dynamic_from_influence, m)?)?;
    m.add_function(wrap_pyfunction!(py_momentum_dynamic, m)?)?;
    m.add_function(wrap_pyfunction!(py_fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_advantage, m)?)?;
    m.add_function(wrap_pyfunction!(compute_t_hat, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyLedger>()?;
    m.add_class::<PyLossModel>()?;
    Ok(())
}
