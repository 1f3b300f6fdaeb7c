//! Python extension module `hte_eval`: dataset generation, restricted-model
//! fitting, and the full nested-CV evaluation, returned as plain Python
//! objects. Column-oriented inputs (outcome list, treatment list, covariate
//! rows) mirror the CSV layout the CLI consumes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use hte_core::seeds::child_seed;
use hte_core::{
    fit_restricted, generate, run_evaluation, Dataset, Error, GeneratorSpec, LearnerSpec, Mode,
    NcvConfig, RestrictedModel,
};

fn to_py_err(e: Error) -> PyErr {
    let validation = matches!(
        e,
        Error::MissingColumn(_)
            | Error::NonNumericCell { .. }
            | Error::MissingValue { .. }
            | Error::InvalidTreatmentValue { .. }
            | Error::InvalidPropensity { .. }
            | Error::EmptyDataset
            | Error::MissingArm { .. }
            | Error::TooFewRowsPerArm { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidConfig(_)
    );
    if validation {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_mode(text: &str) -> PyResult<Mode> {
    match text {
        "outcome" => Ok(Mode::Outcome),
        "modified" => Ok(Mode::Modified),
        "modified_from_outcome" => Ok(Mode::ModifiedFromOutcome),
        other => Err(PyValueError::new_err(format!(
            "unknown mode '{other}' (expected outcome, modified, or modified_from_outcome)"
        ))),
    }
}

fn parse_learner(text: &str, tuning_seed: u64) -> PyResult<LearnerSpec> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("learner JSON: {e}")))
    } else {
        LearnerSpec::preset(text, tuning_seed).map_err(to_py_err)
    }
}

fn build_dataset(outcomes: Vec<f64>, treatments: Vec<u8>, rows: Vec<Vec<f64>>) -> PyResult<Dataset> {
    Dataset::new(outcomes, treatments, rows, None).map_err(to_py_err)
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// A fitted constant-effect model: the unrestricted family refit on shifted
/// outcomes at the SSE-minimizing shift.
#[pyclass(name = "Restricted")]
struct PyRestricted {
    inner: RestrictedModel,
}

#[pymethods]
impl PyRestricted {
    /// The constant treatment effect the model is pinned to.
    #[getter]
    fn tau_star(&self) -> f64 {
        self.inner.tau_star()
    }

    /// Predicted outcome for arm `a` at covariates `x`.
    fn predict(&self, a: u8, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(a, &x).map_err(to_py_err)
    }
}

/// Draws a dataset from a built-in design; returns (y, a, x) column lists.
#[pyfunction]
#[pyo3(signature = (design, n, seed = 0, noise_sd = 1.0))]
fn generate_dataset(
    py: Python<'_>,
    design: &str,
    n: usize,
    seed: u64,
    noise_sd: f64,
) -> PyResult<(Py<PyAny>, Py<PyAny>, Py<PyAny>)> {
    let kind = design.parse().map_err(to_py_err)?;
    let mut g = GeneratorSpec::new(kind, n, seed);
    g.noise_sd = noise_sd;
    let d = generate(&g).map_err(to_py_err)?;
    let y = PyList::new(py, d.outcomes())?;
    let a = PyList::new(py, d.treatments())?;
    let x = PyList::empty(py);
    for i in 0..d.n() {
        x.append(PyList::new(py, d.covariate_row(i))?)?;
    }
    Ok((y.unbind().into(), a.unbind().into(), x.unbind().into()))
}

/// Fits the restricted (constant-effect) model on column-oriented data.
#[pyfunction]
#[pyo3(signature = (y, a, x, learner = "ols", seed = 0))]
fn fit_restricted_model(
    y: Vec<f64>,
    a: Vec<u8>,
    x: Vec<Vec<f64>>,
    learner: &str,
    seed: u64,
) -> PyResult<PyRestricted> {
    let d = build_dataset(y, a, x)?;
    let spec = parse_learner(learner, child_seed(seed, 1))?;
    let inner = fit_restricted(&spec, &d).map_err(to_py_err)?;
    Ok(PyRestricted { inner })
}

/// Runs the full nested-CV evaluation; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    y, a, x,
    propensity = None,
    learner = "ols",
    mode = "outcome",
    k = 5,
    reps = 50,
    alphas = vec![0.05],
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    y: Vec<f64>,
    a: Vec<u8>,
    x: Vec<Vec<f64>>,
    propensity: Option<Vec<f64>>,
    learner: &str,
    mode: &str,
    k: usize,
    reps: usize,
    alphas: Vec<f64>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let d = build_dataset(y, a, x)?;
    let spec = parse_learner(learner, child_seed(seed, 1))?;
    let cfg = NcvConfig {
        k,
        reps,
        alpha_levels: alphas,
        seed,
        mode: parse_mode(mode)?,
        ..NcvConfig::default()
    };
    let report = py
        .detach(|| run_evaluation(&spec, &d, propensity.as_deref(), &cfg))
        .map_err(to_py_err)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(json_to_py(py, &value)?.unbind())
}

#[pymodule]
fn hte_eval(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRestricted>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_restricted_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
