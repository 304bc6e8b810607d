//! Python bindings. Results cross the boundary as JSON and come back to
//! Python as plain dicts.

use std::collections::BTreeMap;

use pmkg::diagnostics::{run_gradcheck, GradcheckOptions};
use pmkg::kg::synthetic::{generate_synthetic, SyntheticSpec};
use pmkg::{compute_metrics, evaluate, train, Checkpoint, Config, Dataset};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: pmkg::Error) -> PyErr {
    if e.is_data_error() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// Writes a synthetic dataset; `spec_json` overrides fields of the default
/// spec. Returns the manifest.
pub fn generate_synthetic_json(out: &str, seed: u64, spec_json: Option<&str>) -> pmkg::Result<String> {
    let spec: SyntheticSpec = match spec_json {
        Some(s) => serde_json::from_str(s).map_err(|e| pmkg::Error::Config(format!("synthetic spec: {e}")))?,
        None => SyntheticSpec::default(),
    };
    let data = generate_synthetic(&spec, seed)?;
    data.write(out)?;
    Ok(to_json(&data.manifest))
}

/// Trains with the default config updated by `overrides`, writes the run
/// outputs into `out`, and returns the report.
pub fn train_json(data_dir: &str, out: &str, overrides: &BTreeMap<String, String>) -> pmkg::Result<String> {
    let mut cfg = Config::default();
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let data = Dataset::load(data_dir, cfg.k_shot, cfg.max_neighbors, cfg.seed)?;
    let outcome = train(&cfg, &data, 1)?;
    outcome.write(out)?;
    Ok(to_json(&outcome.report))
}

/// Metrics of a checkpoint on the test split, or on `tasks` if given.
pub fn evaluate_json(checkpoint: &str, data_dir: &str, tasks: Option<&str>, k_shot: Option<usize>) -> pmkg::Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(k) = k_shot {
        cfg.k_shot = k;
    }
    let mut data = Dataset::load(data_dir, cfg.k_shot, cfg.max_neighbors, cfg.seed)?;
    ck.check_vocab(&data.kg)?;
    let tasks = match tasks {
        Some(p) => data.load_extra_tasks(p, cfg.k_shot)?,
        None => data.test.clone(),
    };
    Ok(to_json(&evaluate(&ck.params, &cfg, &data.kg, &tasks)?))
}

fn loads<'py>(py: Python<'py>, s: String) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

#[pyfunction]
#[pyo3(name = "generate_synthetic", signature = (out, seed = 0, spec = None))]
fn py_generate_synthetic<'py>(py: Python<'py>, out: &str, seed: u64, spec: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let s = generate_synthetic_json(out, seed, spec).map_err(err)?;
    loads(py, s)
}

#[pyfunction]
#[pyo3(name = "train", signature = (data, out, config = None))]
fn py_train<'py>(py: Python<'py>, data: &str, out: &str, config: Option<BTreeMap<String, String>>) -> PyResult<Bound<'py, PyAny>> {
    let s = train_json(data, out, &config.unwrap_or_default()).map_err(err)?;
    loads(py, s)
}

#[pyfunction]
#[pyo3(name = "evaluate", signature = (checkpoint, data, tasks = None, k_shot = None))]
fn py_evaluate<'py>(
    py: Python<'py>,
    checkpoint: &str,
    data: &str,
    tasks: Option<&str>,
    k_shot: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = evaluate_json(checkpoint, data, tasks, k_shot).map_err(err)?;
    loads(py, s)
}

#[pyfunction]
#[pyo3(name = "gradcheck", signature = (seed = 0, dim = 4, eps = 1e-5, tolerance = 1e-4))]
fn py_gradcheck(py: Python<'_>, seed: u64, dim: usize, eps: f64, tolerance: f64) -> PyResult<Bound<'_, PyAny>> {
    if !(eps > 0.0) || dim == 0 {
        return Err(PyValueError::new_err("eps must be positive and dim nonzero"));
    }
    let report = run_gradcheck(&GradcheckOptions { seed, dim, eps, tolerance }).map_err(err)?;
    loads(py, to_json(&report))
}

#[pyfunction]
#[pyo3(name = "compute_metrics")]
fn py_compute_metrics(py: Python<'_>, ranks: Vec<usize>) -> PyResult<Bound<'_, PyAny>> {
    let m = compute_metrics(&ranks).map_err(err)?;
    loads(py, to_json(&m))
}

#[pyfunction]
fn config_keys() -> Vec<&'static str> {
    Config::KEYS.to_vec()
}

#[pymodule]
fn pmkg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(py_generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(py_train, m)?)?;
    m.add_function(wrap_pyfunction!(py_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(py_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(py_compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(config_keys, m)?)?;
    Ok(())
}
