use std::path::{Path, PathBuf};

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qverify_core::bath::{self, BathCorrelation, ExpTerm};
use qverify_core::dynamics::{Dynamics, LindbladModel, TimeGrid};
use qverify_core::hilbert::{pauli, DensityMatrix, Pauli};
use qverify_core::protocol::{self, Verdict};
use qverify_core::scenario::{self, RunOptions};
use qverify_core::Error;
use serde::Serialize;

create_exception!(
    qverify,
    SchemaError,
    PyValueError,
    "Invalid scenario or input file."
);
create_exception!(
    qverify,
    NumericError,
    PyRuntimeError,
    "Numerical failure during a run."
);

fn to_py(e: Error) -> PyErr {
    if e.is_schema_error() {
        SchemaError::new_err(e.to_string())
    } else {
        NumericError::new_err(e.to_string())
    }
}

/// Plain Python objects via a JSON round trip.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_pauli(name: &str) -> PyResult<Pauli> {
    match name {
        "x" | "sigma_x" => Ok(Pauli::X),
        "y" | "sigma_y" => Ok(Pauli::Y),
        "z" | "sigma_z" => Ok(Pauli::Z),
        "identity" => Ok(Pauli::Identity),
        other => Err(PyValueError::new_err(format!(
            "unknown Pauli operator '{other}'"
        ))),
    }
}

/// A validated scenario file.
#[pyclass(name = "Scenario", module = "qverify", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: scenario::Scenario,
    base_dir: PathBuf,
}

#[pymethods]
impl PyScenario {
    /// Parses JSON text; data and sample files resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir = "."))]
    fn from_json(text: &str, base_dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::Scenario::from_json(text).map_err(to_py)?,
            base_dir: PathBuf::from(base_dir),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = scenario::Scenario::load(&path).map_err(to_py)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { inner, base_dir })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner.to_value()).expect("scenario serializes")
    }

    /// Copy with one numeric field changed (dotted path or sweep alias).
    fn with_parameter(&self, param: &str, value: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_parameter(param, value).map_err(to_py)?,
            base_dir: self.base_dir.clone(),
        })
    }

    /// Runs the protocol. Returns the report as a dict; with `out_dir` the
    /// usual files are written there too.
    #[pyo3(signature = (resolution = None, out_dir = None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        resolution: Option<usize>,
        out_dir: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let opts = RunOptions { resolution };
        let outcome = py
            .detach(|| scenario::run_scenario(&self.inner, &self.base_dir, opts))
            .map_err(to_py)?;
        if let Some(dir) = out_dir {
            scenario::write_outcome(&outcome, &dir).map_err(to_py)?;
        }
        let result = to_object(py, &outcome)?;
        result.set_item("timeseries", to_object(py, &outcome.timeseries)?)?;
        Ok(result)
    }

    /// Writes the correlator grids (and bath samples when available) to `out_dir`.
    #[pyo3(signature = (out_dir, resolution = None))]
    fn export_correlators(
        &self,
        py: Python<'_>,
        out_dir: PathBuf,
        resolution: Option<usize>,
    ) -> PyResult<usize> {
        let opts = RunOptions { resolution };
        py.detach(|| {
            let grids = scenario::export_correlators(&self.inner, &self.base_dir, opts)?;
            scenario::write_correlators(&grids, &out_dir)?;
            if let Some(samples) = scenario::export_bath_samples(&self.inner, &self.base_dir, opts)?
            {
                scenario::write_bath_samples(&samples, &out_dir)?;
            }
            Ok(grids.len())
        })
        .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.inner.name)
    }
}

/// `C(τ) = Σ λ e^{−γ|τ|} e^{−iΩτ}`.
#[pyclass(
    name = "BathCorrelator",
    module = "qverify",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyBath {
    inner: bath::BathCorrelator,
}

#[pymethods]
impl PyBath {
    /// `terms` holds `(lambda, gamma)` or `(lambda, gamma, omega)` tuples.
    #[new]
    fn new(terms: Vec<Vec<f64>>) -> PyResult<Self> {
        let terms = terms
            .into_iter()
            .map(|t| match t[..] {
                [lambda, gamma] => Ok(ExpTerm {
                    lambda,
                    gamma,
                    omega: 0.0,
                }),
                [lambda, gamma, omega] => Ok(ExpTerm {
                    lambda,
                    gamma,
                    omega,
                }),
                _ => Err(PyValueError::new_err(
                    "each term is (lambda, gamma[, omega])",
                )),
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: bath::BathCorrelator::new(terms).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn exponential(lambda: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: bath::BathCorrelator::exponential(lambda, gamma).map_err(to_py)?,
        })
    }

    fn __call__(&self, tau: f64) -> Complex64 {
        self.inner.value(tau)
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            inner: self.inner.scaled(s),
        }
    }

    /// `∫_{t0}^{t} dt₁ ∫_{t0}^{t₁} dt₂ |C(t₁ − t₂)|`.
    fn abs_double_integral(&self, t0: f64, t: f64) -> f64 {
        self.inner.abs_double_integral(t0, t)
    }

    /// `∫₀^∞ C(τ) dτ`.
    fn markov_kernel(&self) -> Option<Complex64> {
        self.inner.markov_kernel()
    }

    #[getter]
    fn terms(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .terms()
            .iter()
            .map(|t| (t.lambda, t.gamma, t.omega))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("BathCorrelator({:?})", self.terms())
    }
}

/// Fits one exponential term to `(tau, C)` samples inside `window`.
#[pyfunction]
#[pyo3(signature = (taus, values, window = None))]
fn fit_exponential(
    taus: Vec<f64>,
    values: Vec<Complex64>,
    window: Option<(f64, f64)>,
) -> PyResult<PyBath> {
    if taus.len() != values.len() {
        return Err(PyValueError::new_err("taus and values differ in length"));
    }
    let samples: Vec<_> = taus.into_iter().zip(values).collect();
    let window = window.unwrap_or((0.0, samples.iter().map(|s| s.0).fold(0.0, f64::max)));
    let fit = bath::fit_exponential(&samples, window).map_err(to_py)?;
    Ok(PyBath { inner: fit.bath })
}

/// Single driven spin with decay, checked against `bath` on `[0, t]`.
/// Returns the flat report dict.
#[pyfunction]
#[pyo3(signature = (bath, t, *, eps = 1.0, decay = 0.0, a = 1.0, observable = "z", coupling = "x", n_steps = 200, eta = 0.1))]
#[allow(clippy::too_many_arguments)]
fn spin_protocol<'py>(
    py: Python<'py>,
    bath: &PyBath,
    t: f64,
    eps: f64,
    decay: f64,
    a: f64,
    observable: &str,
    coupling: &str,
    n_steps: usize,
    eta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let (obs, op) = (
        pauli(parse_pauli(observable)?),
        pauli(parse_pauli(coupling)?),
    );
    let report = py
        .detach(|| {
            let model = Dynamics::Lindblad(LindbladModel::spin_decay(eps, decay)?);
            let rho = DensityMatrix::spin_mixed(a)?;
            let grid = TimeGrid::new(0.0, t, n_steps)?;
            protocol::run_protocol(&model, &rho, &obs, &op, &bath.inner, &grid, eta)
        })
        .map_err(to_py)?;
    to_object(py, &report)
}

/// Verdict string from a ratio and the fourth-order estimate.
#[pyfunction]
#[pyo3(signature = (ratio, eta, c4_over_a = 0.0, all_times = true, bounded = false))]
fn verdict(ratio: f64, eta: f64, c4_over_a: f64, all_times: bool, bounded: bool) -> &'static str {
    let v: Verdict = if bounded {
        protocol::bounded_verdict(ratio, c4_over_a, eta)
    } else {
        protocol::full_verdict(ratio, c4_over_a, all_times, eta)
    };
    v.as_str()
}

#[pymodule]
fn qverify(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SchemaError", m.py().get_type::<SchemaError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyBath>()?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(spin_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(verdict, m)?)?;
    Ok(())
}
