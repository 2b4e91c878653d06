//! Python module `cellfree`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cellfree::bnb::solve_exact_with;
use cellfree::formulation::ProblemInstance;
use cellfree::harness::{self, ExperimentConfig, Method};
use cellfree::heuristics::{algorithm1, algorithm2, disjoint_sparsity, transmit_only};
use cellfree::performance::{self, ActiveSet, Allocation};
use cellfree::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>], shape: (usize, usize)) -> PyResult<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(PyValueError::new_err(format!(
            "expected a {} x {} nested list",
            shape.0, shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

/// Experiment configuration; keys and values as in the config file format.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::from_text(t).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .pairs()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(drops={}, seed={})",
            self.inner.drops, self.inner.seed
        )
    }
}

/// One drop: large-scale fading, pilots, targets and power model.
#[pyclass(name = "Instance")]
struct PyInstance {
    inner: ProblemInstance,
    config: ExperimentConfig,
}

fn allocation_dict<'py>(py: Python<'py>, a: &Allocation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("transmit_w", a.power.transmit)?;
    d.set_item("hardware_w", a.power.hardware)?;
    d.set_item("total_w", a.power.total)?;
    d.set_item("radiated_w", a.power.radiated)?;
    d.set_item("active", a.active.indices())?;
    d.set_item("rho", rows(&a.rho()))?;
    d.set_item("sinr", a.sinr.clone())?;
    d.set_item("se", a.se.clone())?;
    Ok(d)
}

#[pymethods]
impl PyInstance {
    /// Builds drop `drop` of the configured scenario.
    #[new]
    fn new(config: &PyConfig, drop: u64) -> PyResult<Self> {
        let inner = config
            .inner
            .scenario
            .build_drop(config.inner.seed, drop)
            .map_err(py_err)?;
        Ok(Self {
            inner,
            config: config.inner.clone(),
        })
    }

    #[getter]
    fn num_aps(&self) -> usize {
        self.inner.num_aps()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.stats.beta)
    }

    #[getter]
    fn gamma(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.stats.gamma)
    }

    #[getter]
    fn nu(&self) -> Vec<f64> {
        self.inner.nu.clone()
    }

    #[getter]
    fn sigma2_dl(&self) -> f64 {
        self.inner.stats.sigma2_dl
    }

    #[getter]
    fn hardware_w(&self) -> Vec<f64> {
        self.inner.hardware.clone()
    }

    /// Runs one method ("transmit-only", "algorithm1", "algorithm2",
    /// "disjoint", "optimal"). Raises RuntimeError when infeasible.
    fn solve<'py>(&self, py: Python<'py>, method: &str) -> PyResult<Bound<'py, PyDict>> {
        let m = Method::parse(method)
            .ok_or_else(|| PyValueError::new_err(format!("unknown method {method:?}")))?;
        let hp = &self.config.heuristics;
        let inst = &self.inner;
        let (alloc, extra) = py
            .detach(|| -> cellfree::Result<(Allocation, Option<(usize, f64)>)> {
                Ok(match m {
                    Method::TransmitOnly => (transmit_only(inst, hp)?.allocation, None),
                    Method::Algorithm1 => (algorithm1(inst, hp)?.allocation, None),
                    Method::Algorithm2 => (algorithm2(inst, hp)?.allocation, None),
                    Method::Disjoint => (disjoint_sparsity(inst, hp)?.allocation, None),
                    Method::Optimal => {
                        let r = solve_exact_with(inst, &self.config.bnb, None)?;
                        let info = (r.state.counters.relaxations_solved, r.state.relative_gap());
                        (r.allocation, Some(info))
                    }
                })
            })
            .map_err(py_err)?;
        let d = allocation_dict(py, &alloc)?;
        if let Some((nodes, gap)) = extra {
            d.set_item("nodes", nodes)?;
            d.set_item("gap", gap)?;
        }
        Ok(d)
    }

    /// SINR of every user for transmit powers `rho` (M x K) on the active APs.
    fn sinr(&self, rho: Vec<Vec<f64>>, active: Vec<usize>) -> PyResult<Vec<f64>> {
        let shape = (self.inner.num_aps(), self.inner.num_users());
        let q = matrix(&rho, shape)?;
        if q.iter().any(|&v| !(v >= 0.0)) {
            return Err(PyValueError::new_err("powers must be nonnegative"));
        }
        if active.iter().any(|&m| m >= shape.0) {
            return Err(PyValueError::new_err("AP index out of range"));
        }
        let q = q.map(f64::sqrt);
        let set = ActiveSet::from_indices(shape.0, active);
        performance::sinr(
            &self.inner.stats,
            self.inner.scheme,
            &self.inner.pilots,
            &q,
            &set,
        )
        .map_err(py_err)
    }
}

/// Runs the experiment and returns its records as dicts.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let report = py
        .detach(|| harness::run_experiment(&cfg))
        .map_err(py_err)?;
    report
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("drop", r.drop)?;
            d.set_item("method", r.method.name())?;
            d.set_item("precoder", r.precoder.name())?;
            d.set_item("status", r.status.name())?;
            d.set_item("transmit_w", r.transmit_w)?;
            d.set_item("hardware_w", r.hardware_w)?;
            d.set_item("total_w", r.total_w)?;
            d.set_item("radiated_w", r.radiated_w)?;
            d.set_item("active_aps", r.active_aps)?;
            d.set_item("nodes", r.nodes)?;
            d.set_item("gap", r.gap)?;
            d.set_item("seconds", r.seconds)?;
            Ok(d)
        })
        .collect()
}

/// Runs the experiment and writes the report files into `out_dir`.
#[pyfunction]
fn run_and_emit(py: Python<'_>, config: &PyConfig, out_dir: &str) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    py.detach(|| {
        let report = harness::run_experiment(&cfg)?;
        harness::emit(&report, std::path::Path::new(out_dir))
    })
    .map(|paths| paths.iter().map(|p| p.display().to_string()).collect())
    .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "cellfree")]
fn cellfree_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_and_emit, m)?)?;
    Ok(())
}
