//! Python bindings: configuration handling and the run, reduced, crossval,
//! sweep and validate pipelines. Structured results come back as plain
//! Python objects decoded from their JSON form.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use swarmsim_core::config::{reference_config, RunConfig};
use swarmsim_core::harness::{simulate, sweep as run_sweep, RunArtifacts};
use swarmsim_core::model_spec::validate_hypotheses;
use swarmsim_core::reduced::{cross_validate, reduced_spec_for, run_reduced, CrossValTolerances};
use swarmsim_core::SimError;

create_exception!(swarmsim, SimulationError, PyException);

fn to_py(e: SimError) -> PyErr {
    match e {
        SimError::ConfigInvalid(_) | SimError::ConfigMismatch(_) => PyValueError::new_err(e.to_string()),
        other => SimulationError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn value(x: impl serde::Serialize) -> PyResult<Value> {
    serde_json::to_value(x).map_err(|e| SimulationError::new_err(e.to_string()))
}

/// Validated run configuration.
#[pyclass(name = "Config", module = "swarmsim", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RunConfig::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn reference() -> Self {
        Self { inner: reference_config() }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.t_end
    }

    #[getter]
    fn cells(&self) -> Vec<usize> {
        self.inner.grid.cells.clone()
    }

    /// Copy at another α with cells scaled by the α ratio.
    fn at_alpha(&self, alpha: f64) -> PyResult<Self> {
        let c = self.inner.at_alpha(alpha);
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    /// Copy with the horizon replaced.
    fn with_t_end(&self, t_end: f64) -> PyResult<Self> {
        let mut c = self.inner.clone();
        c.t_end = t_end;
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    fn __repr__(&self) -> String {
        format!("Config(alpha={}, cells={:?}, t_end={})", self.inner.alpha, self.inner.grid.cells, self.inner.t_end)
    }
}

/// Outcome of a full binned run.
#[pyclass(name = "RunResult", module = "swarmsim")]
struct PyRunResult {
    inner: RunArtifacts,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &value(&self.inner.manifest)?)
    }

    #[getter]
    fn margins<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &value(&self.inner.margins)?)
    }

    #[getter]
    fn weak_residuals(&self) -> Vec<f64> {
        self.inner.weak.iter().map(|(_, r)| r.value).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.0).collect()
    }

    /// Λ at every sample time.
    #[getter]
    fn lambda_samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.1.clone()).collect()
    }

    #[getter]
    fn v_samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.2.clone()).collect()
    }

    /// Swarmer bins u_i at the final time.
    #[getter]
    fn final_u(&self) -> Vec<Vec<f64>> {
        self.inner.final_state.u.clone()
    }

    #[getter]
    fn cell_centers(&self) -> Vec<[f64; 2]> {
        (0..self.inner.grid.n_cells()).map(|c| self.inner.grid.cell_center(c)).collect()
    }

    fn all_margins_nonnegative(&self) -> bool {
        self.inner.all_margins_nonnegative()
    }
}

/// Full binned run with diagnostics; nothing is written to disk unless
/// `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run(py: Python<'_>, config: &PyConfig, out: Option<std::path::PathBuf>) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    if let Some(d) = &out {
        std::fs::create_dir_all(d).map_err(|e| to_py(e.into()))?;
    }
    py.detach(|| simulate(&cfg, out.as_deref()))
        .map(|inner| PyRunResult { inner })
        .map_err(to_py)
}

/// Reduced two-field system; returns {"times", "lambda", "v"}.
#[pyfunction]
fn reduced<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let traj = py
        .detach(|| -> swarmsim_core::Result<_> {
            let p = cfg.problem()?;
            let spec = reduced_spec_for(&cfg)?;
            let s0 = cfg.initial_state(&p)?;
            run_reduced(&spec, &p.sgrid, s0.lambda_rec, s0.v, &cfg.run_params())
        })
        .map_err(to_py)?;
    let v = serde_json::json!({
        "times": traj.iter().map(|s| s.t).collect::<Vec<_>>(),
        "lambda": traj.iter().map(|s| s.lambda.clone()).collect::<Vec<_>>(),
        "v": traj.iter().map(|s| s.v.clone()).collect::<Vec<_>>(),
    });
    json_to_py(py, &v)
}

#[pyfunction]
fn crossval<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let r = py.detach(|| cross_validate(&cfg, CrossValTolerances::default())).map_err(to_py)?;
    json_to_py(py, &value(r)?)
}

#[pyfunction]
#[pyo3(signature = (config, levels=None))]
fn sweep<'py>(py: Python<'py>, config: &PyConfig, levels: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let r = py.detach(|| run_sweep(&cfg, levels, None)).map_err(to_py)?;
    json_to_py(py, &value(r)?)
}

/// Continuum hypothesis report on [0, r_max] (default 1/α).
#[pyfunction]
#[pyo3(signature = (config, r_max=None))]
fn validate<'py>(py: Python<'py>, config: &PyConfig, r_max: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.inner;
    let spec = cfg.model.build().map_err(to_py)?;
    let r = r_max.or(cfg.diagnostics.r_max).unwrap_or(1.0 / cfg.alpha);
    let report = validate_hypotheses(&spec, r, cfg.a_max(), cfg.diagnostics.hypothesis_samples).map_err(to_py)?;
    json_to_py(py, &value(report)?)
}

#[pymodule]
fn swarmsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add("SimulationError", m.py().get_type::<SimulationError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(reduced, m)?)?;
    m.add_function(wrap_pyfunction!(crossval, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
