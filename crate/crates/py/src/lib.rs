//! Python bindings: GP datasets, the feasibility classifier and safety filter
//! on a single constraint, and config-driven episodes.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use safe_cbf_lab::feasibility::{self, ConstraintData as CoreConstraint};
use safe_cbf_lab::filter::{gp_cbf_socp, FilterConfig};
use safe_cbf_lab::gp::{Dataset as CoreDataset, KernelConfig, SeKernel};
use safe_cbf_lab::harness::verify::{run_suite, Suite};
use safe_cbf_lab::harness::{self, LoadedConfig};
use safe_cbf_lab::learner::{get_lambda_dagger, run_episode, Scenario, SimTrace, Variant};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vec(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// GP over the barrier mismatch with the control-affine compound kernel.
#[pyclass(module = "safe_cbf_lab", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// One `(variance, length_scales)` pair per base kernel: drift first,
    /// then one per input channel.
    #[new]
    fn new(variances: Vec<f64>, length_scales: Vec<Vec<f64>>, noise: f64, state_dim: usize) -> PyResult<Self> {
        if variances.len() != length_scales.len() {
            return Err(PyValueError::new_err("variances and length_scales differ in length"));
        }
        let comps = variances
            .into_iter()
            .zip(length_scales)
            .map(|(v, l)| SeKernel::new(v, l))
            .collect();
        let inner = CoreDataset::new(KernelConfig::new(comps, noise), state_dim).map_err(err)?;
        Ok(Self { inner })
    }

    fn add(&mut self, x: Vec<f64>, u: Vec<f64>, z: f64) -> PyResult<()> {
        self.inner.add_measurement(&vec(x), &vec(u), z).map_err(err)
    }

    /// Posterior `(mean, variance)` of the mismatch at `(x, u)`.
    fn predict(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict(&vec(x), &vec(u)).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreDataset::from_json(text).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
}

/// Chance constraint `lg u + lf + gamma_b - beta |Sigma^{1/2} [1, u]| >= 0`.
#[pyclass(module = "safe_cbf_lab", skip_from_py_object)]
#[derive(Clone)]
struct ConstraintData {
    inner: CoreConstraint,
}

#[pymethods]
impl ConstraintData {
    #[new]
    fn new(lf_hat: f64, lg_hat: Vec<f64>, sigma_b: Vec<Vec<f64>>, gamma_b: f64, beta: f64) -> PyResult<Self> {
        let k = sigma_b.len();
        if sigma_b.iter().any(|r| r.len() != k) {
            return Err(PyValueError::new_err("sigma_b must be square"));
        }
        let s = DMatrix::from_fn(k, k, |i, j| sigma_b[i][j]);
        let inner = CoreConstraint::from_moments(lf_hat, vec(lg_hat), s, gamma_b, beta).map_err(err)?;
        Ok(Self { inner })
    }

    fn margin(&self, u: Vec<f64>) -> f64 {
        self.inner.margin(&vec(u))
    }

    /// lambda_dagger, e_dagger, case, feasible and a witness input if any.
    fn classify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rep = feasibility::classify(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("lambda_dagger", rep.lambda_dagger)?;
        d.set_item("e_dagger", rep.e_dagger.as_slice().to_vec())?;
        d.set_item("case", rep.case().as_str())?;
        d.set_item("feasible", rep.feasible)?;
        d.set_item("witness", rep.witness.map(|w| w.as_slice().to_vec()))?;
        Ok(d)
    }

    /// Closest input to `u_ref` that satisfies the constraint.
    fn filter(&self, u_ref: Vec<f64>) -> PyResult<Vec<f64>> {
        let rep = feasibility::classify(&self.inner).map_err(err)?;
        if !rep.feasible {
            return Err(PyRuntimeError::new_err("constraint is infeasible"));
        }
        let (u, _, _) = gp_cbf_socp(
            &vec(u_ref),
            &self.inner,
            None,
            &FilterConfig::default(),
            rep.witness.as_ref(),
        )
        .map_err(err)?;
        Ok(u.as_slice().to_vec())
    }
}

/// A finished episode.
#[pyclass(module = "safe_cbf_lab")]
struct Episode {
    trace: SimTrace,
    hash: String,
}

#[pymethods]
impl Episode {
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = harness::metrics(&self.trace, &self.hash);
        let text = serde_json::to_string(&m).map_err(err)?;
        json_to_py(py, &text)
    }

    fn trace_csv(&self) -> PyResult<String> {
        harness::trace_csv(&self.trace).map_err(err)
    }

    #[getter]
    fn completed(&self) -> bool {
        self.trace.completed()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.trace.rows.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn barrier(&self) -> Vec<f64> {
        self.trace.rows.iter().map(|r| r.b).collect()
    }

    #[getter]
    fn lambda_dagger(&self) -> Vec<f64> {
        self.trace.rows.iter().map(|r| r.lambda_dagger).collect()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.trace.rows.iter().map(|r| r.x.clone()).collect()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.trace.rows.iter().map(|r| r.u.clone()).collect()
    }

    #[getter]
    fn triggers(&self) -> Vec<&'static str> {
        self.trace.rows.iter().map(|r| r.trigger.as_str()).collect()
    }

    fn final_dataset(&self) -> Dataset {
        Dataset {
            inner: self.trace.final_dataset.clone(),
        }
    }

    fn __len__(&self) -> usize {
        self.trace.rows.len()
    }
}

/// Scenario loaded from a TOML config.
#[pyclass(module = "safe_cbf_lab")]
struct Experiment {
    cfg: LoadedConfig,
    sc: Scenario,
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(|e: String| PyValueError::new_err(e))
}

#[pymethods]
impl Experiment {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let cfg = LoadedConfig::load(&path).map_err(err)?;
        let sc = cfg.scenario().map_err(err)?;
        Ok(Self { cfg, sc })
    }

    #[getter]
    fn name(&self) -> String {
        self.cfg.config.name.clone()
    }

    #[getter]
    fn variants(&self) -> Vec<&'static str> {
        self.cfg.config.variants.iter().map(|v| v.as_str()).collect()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.sc.x0.as_slice().to_vec()
    }

    #[pyo3(signature = (variant, seed=0, t_max=None))]
    fn run(&self, py: Python<'_>, variant: &str, seed: u64, t_max: Option<f64>) -> PyResult<Episode> {
        let v = parse_variant(variant)?;
        let mut sc = self.sc.clone();
        if let Some(t) = t_max {
            sc.learner.t_max = t;
        }
        let trace = py.detach(|| run_episode(&sc, v, seed)).map_err(err)?;
        Ok(Episode {
            trace,
            hash: self.cfg.hash.clone(),
        })
    }

    /// lambda_dagger at `x` for `dataset`, or for the empty dataset.
    #[pyo3(signature = (x, dataset=None))]
    fn lambda_dagger(&self, x: Vec<f64>, dataset: Option<&Dataset>) -> PyResult<f64> {
        let empty;
        let ds = match dataset {
            Some(d) => &d.inner,
            None => {
                empty = CoreDataset::new(self.sc.kernel.clone(), self.sc.nominal.state_dim()).map_err(err)?;
                &empty
            }
        };
        let (lam, _, _) = get_lambda_dagger(&vec(x), ds, self.sc.nominal.as_ref(), &self.sc.filter).map_err(err)?;
        Ok(lam)
    }
}

/// Randomized oracle checks: `feasibility`, `solver` or `gp`.
#[pyfunction]
#[pyo3(signature = (suite, n, seed=0))]
fn verify<'py>(py: Python<'py>, suite: &str, n: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let s: Suite = suite.parse().map_err(|e: String| PyValueError::new_err(e))?;
    let rep = py.detach(|| run_suite(s, n, seed));
    let d = PyDict::new(py);
    d.set_item("passed", rep.passed())?;
    d.set_item("instances", rep.instances)?;
    d.set_item("checked", rep.checked)?;
    d.set_item("failures", rep.failures.clone())?;
    d.set_item("max_error", rep.max_error)?;
    d.set_item("runtime_s", rep.runtime_s)?;
    Ok(d)
}

/// Add the classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<ConstraintData>()?;
    m.add_class::<Episode>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "safe_cbf_lab")]
fn safe_cbf_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
