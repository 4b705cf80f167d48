use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use scpo::checkpoint::Checkpoint;
use scpo::control::solve_dare as dare;
use scpo::error::ScpoError;
use scpo::experiment::{run_experiment, run_reachable, ExperimentConfig};
use scpo::net::PolicyNet;
use scpo::params::ParamVector;
use scpo::projection::{estimate_initial_l, project as project_bank, UpdateBank};

fn py_err(e: ScpoError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>, name: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn config(json: &str) -> PyResult<ExperimentConfig> {
    let c = ExperimentConfig::from_json_str(json).map_err(py_err)?;
    c.validate().map_err(py_err)?;
    Ok(c)
}

/// Project the newest bank step onto the sampled safe set.
///
/// `deltas[i]` is an offset from the current parameters and `gs[i]` its
/// constraint values; `g_ref` holds the values at the current parameters.
/// `l` defaults to the finite-difference estimate from the bank.
#[pyfunction]
#[pyo3(signature = (deltas, gs, g_ref, l=None))]
fn project<'py>(
    py: Python<'py>,
    deltas: Vec<Vec<f64>>,
    gs: Vec<Vec<f64>>,
    g_ref: Vec<f64>,
    l: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    if deltas.len() != gs.len() || deltas.is_empty() {
        return Err(PyValueError::new_err("deltas and gs must be non-empty and equally long"));
    }
    let mut bank = UpdateBank::new(deltas.len(), g_ref).map_err(py_err)?;
    for (d, g) in deltas.into_iter().zip(gs) {
        bank.push(ParamVector::new(d), g).map_err(py_err)?;
    }
    let l = l.unwrap_or_else(|| estimate_initial_l(&bank));
    let r = project_bank(&bank, &l).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("status", r.status.as_str())?;
    out.set_item("c", r.c_star)?;
    out.set_item("delta", r.delta_star.into_vec())?;
    out.set_item("objective", r.objective)?;
    out.set_item("l", l)?;
    Ok(out)
}

/// Stabilizing solution of the discrete algebraic Riccati equation.
#[pyfunction]
fn solve_dare<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = dare(&matrix(a, "a")?, &matrix(b, "b")?, &matrix(q, "q")?, &matrix(r, "r")?).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("p", rows(&sol.p))?;
    out.set_item("k", rows(&sol.k))?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("spectral_radius", sol.spectral_radius)?;
    Ok(out)
}

/// Train from a JSON config and write artifacts to `out_dir`.
/// Returns the per-epoch log as a list of dicts.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_json: &str, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = config(config_json)?;
    let run = py.detach(|| run_experiment(&c, &out_dir, |_| {})).map_err(py_err)?;
    run.outcome
        .log
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("loss_after", r.loss_after)?;
            d.set_item("max_g", r.max_g)?;
            d.set_item("alpha", r.alpha)?;
            d.set_item("status", r.status.as_str())?;
            d.set_item("l_vector", r.l_vector.clone())?;
            Ok(d)
        })
        .collect()
}

/// Reachable-set masks for a trained checkpoint; returns the cell counts.
#[pyfunction]
fn reachable<'py>(py: Python<'py>, config_json: &str, policy: PathBuf, out_dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let c = config(config_json)?;
    let counts = py.detach(|| run_reachable(&c, &policy, &out_dir)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("grid", counts.grid)?;
    out.set_item("safe", counts.safe)?;
    out.set_item("theta", counts.theta)?;
    out.set_item("expert", counts.expert)?;
    out.set_item("safe_not_theta", counts.safe_not_theta)?;
    Ok(out)
}

/// A policy network loaded from a checkpoint.
#[pyclass(name = "Policy", frozen)]
struct PyPolicy {
    net: PolicyNet,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let net = Checkpoint::load(&path).and_then(Checkpoint::into_net).map_err(py_err)?;
        Ok(Self { net })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params().as_slice().to_vec()
    }

    /// Raw network output for one input row.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.net.forward(&x).map_err(py_err)
    }
}

#[pymodule]
fn _scpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(reachable, m)?)?;
    m.add_class::<PyPolicy>()?;
    m.add("SAFETY_TOLERANCE", scpo::projection::SAFETY_TOLERANCE)?;
    Ok(())
}
