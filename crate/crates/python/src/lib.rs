use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use delay_hinf::hinf::{hinf_norm as core_hinf_norm, HinfOptions, HinfResult};
use delay_hinf::io;
use delay_hinf::linalg::RMat;
use delay_hinf::model::{assemble_closed_loop, sigma_max, ClosedLoopSystem, ControllerRealization, TimeDelayPlant};
use delay_hinf::optim::{synthesize as core_synthesize, SynthesisOptions};
use delay_hinf::stability::{spectral_abscissa as core_abscissa, StabilityOptions, StabilityReport};
use delay_hinf::Error;

create_exception!(delayhinf, UnstableError, PyRuntimeError);
create_exception!(delayhinf, SynthesisError, PyRuntimeError);

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse(_) | Error::Dimension(_) | Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        Error::Unstable { .. } => UnstableError::new_err(e.to_string()),
        Error::StabilizationFailed { .. } => SynthesisError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(name: &str, rows: &Rows, cols_if_empty: usize) -> PyResult<RMat> {
    if rows.is_empty() {
        return Ok(RMat::zeros(0, cols_if_empty));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err(format!("{name}: rows have different lengths")));
    }
    Ok(RMat::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn rows(m: &RMat) -> Rows {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

#[pyclass(name = "Plant", module = "delayhinf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPlant {
    inner: TimeDelayPlant,
}

#[pymethods]
impl PyPlant {
    #[new]
    #[pyo3(signature = (a, b1, b2, c1, c2, d11, d12, d21, d22, state_delays=vec![], input_delay=0.0, feedthrough_delay=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Rows>,
        b1: Rows,
        b2: Rows,
        c1: Rows,
        c2: Rows,
        d11: Rows,
        d12: Rows,
        d21: Rows,
        d22: Rows,
        state_delays: Vec<f64>,
        input_delay: f64,
        feedthrough_delay: f64,
    ) -> PyResult<Self> {
        let n = a.first().map(|m| m.len()).unwrap_or(0);
        let a = a.iter().enumerate().map(|(i, m)| mat(&format!("A[{i}]"), m, n)).collect::<PyResult<Vec<_>>>()?;
        let inner = TimeDelayPlant::new(
            state_delays,
            input_delay,
            feedthrough_delay,
            a,
            mat("B1", &b1, 0)?,
            mat("B2", &b2, 0)?,
            mat("C1", &c1, n)?,
            mat("C2", &c2, n)?,
            mat("D11", &d11, 0)?,
            mat("D12", &d12, 0)?,
            mat("D21", &d21, 0)?,
            mat("D22", &d22, 0)?,
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: io::parse_plant(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: io::read_plant(path).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        io::plant_to_json(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let p = &self.inner;
        (p.n(), p.nw(), p.nu(), p.nz(), p.ny())
    }

    #[getter]
    fn state_delays(&self) -> Vec<f64> {
        self.inner.state_delays.clone()
    }

    fn __repr__(&self) -> String {
        let (n, nw, nu, nz, ny) = self.dims();
        format!("Plant(n={n}, nw={nw}, nu={nu}, nz={nz}, ny={ny}, delays={:?})", self.inner.state_delays)
    }
}

#[pyclass(name = "Controller", module = "delayhinf", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyController {
    inner: ControllerRealization,
}

#[pymethods]
impl PyController {
    #[new]
    fn new(ak: Rows, bk: Rows, ck: Rows) -> PyResult<Self> {
        let nk = ak.len();
        let inner = ControllerRealization::new(mat("AK", &ak, nk)?, mat("BK", &bk, 0)?, mat("CK", &ck, nk)?)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str, plant: &PyPlant) -> PyResult<Self> {
        Ok(Self { inner: io::parse_controller(text, &plant.inner).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str, plant: &PyPlant) -> PyResult<Self> {
        Ok(Self { inner: io::read_controller(path, &plant.inner).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        io::controller_to_json(&self.inner)
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.nk()
    }

    #[getter]
    fn ak(&self) -> Rows {
        rows(&self.inner.ak)
    }

    #[getter]
    fn bk(&self) -> Rows {
        rows(&self.inner.bk)
    }

    #[getter]
    fn ck(&self) -> Rows {
        rows(&self.inner.ck)
    }

    fn __repr__(&self) -> String {
        format!("Controller(order={}, ak={:?}, bk={:?}, ck={:?})", self.order(), self.ak(), self.bk(), self.ck())
    }
}

#[pyclass(name = "ClosedLoop", module = "delayhinf", frozen)]
pub struct PyClosedLoop {
    inner: ClosedLoopSystem,
}

#[pymethods]
impl PyClosedLoop {
    #[new]
    #[pyo3(signature = (plant, controller=None))]
    fn new(plant: &PyPlant, controller: Option<&PyController>) -> PyResult<Self> {
        Ok(Self { inner: closed_loop(plant, controller)? })
    }

    #[getter]
    fn delays(&self) -> Vec<f64> {
        self.inner.delays.clone()
    }

    #[getter]
    fn a(&self) -> Vec<Rows> {
        self.inner.a.iter().map(rows).collect()
    }

    fn hinf_norm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = py.detach(|| core_hinf_norm(&self.inner, &HinfOptions::default())).map_err(to_py)?;
        hinf_dict(py, &r)
    }

    fn spectral_abscissa<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = py.detach(|| core_abscissa(&self.inner, &StabilityOptions::default())).map_err(to_py)?;
        abscissa_dict(py, &r)
    }

    fn sigma(&self, omegas: Vec<f64>) -> Vec<f64> {
        omegas.iter().map(|&w| sigma_max(&self.inner, w)).collect()
    }
}

fn closed_loop(plant: &PyPlant, controller: Option<&PyController>) -> PyResult<ClosedLoopSystem> {
    let k = match controller {
        Some(k) => k.inner.clone(),
        None => ControllerRealization::zero_order(&plant.inner),
    };
    assemble_closed_loop(&plant.inner, &k).map_err(to_py)
}

fn hinf_dict<'py>(py: Python<'py>, r: &HinfResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("norm", r.norm)?;
    d.set_item("peaks", r.peaks.iter().map(|p| (p.omega, p.sigma)).collect::<Vec<_>>())?;
    d.set_item("n_used", r.n_used)?;
    d.set_item("converged", r.converged)?;
    Ok(d)
}

fn abscissa_dict<'py>(py: Python<'py>, r: &StabilityReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("abscissa", r.abscissa)?;
    d.set_item("roots", r.rightmost_roots.iter().map(|x| (x.re, x.im)).collect::<Vec<_>>())?;
    d.set_item("n_used", r.n_used)?;
    d.set_item("nonsmooth", r.nonsmooth)?;
    Ok(d)
}

/// H-infinity norm of the closed loop; open loop when `controller` is None.
#[pyfunction]
#[pyo3(signature = (plant, controller=None))]
fn hinf_norm<'py>(py: Python<'py>, plant: &PyPlant, controller: Option<&PyController>) -> PyResult<Bound<'py, PyDict>> {
    PyClosedLoop { inner: closed_loop(plant, controller)? }.hinf_norm(py)
}

#[pyfunction]
#[pyo3(signature = (plant, controller=None))]
fn spectral_abscissa<'py>(
    py: Python<'py>,
    plant: &PyPlant,
    controller: Option<&PyController>,
) -> PyResult<Bound<'py, PyDict>> {
    PyClosedLoop { inner: closed_loop(plant, controller)? }.spectral_abscissa(py)
}

#[pyfunction]
#[pyo3(signature = (plant, controller, omegas))]
fn sigma(plant: &PyPlant, controller: Option<&PyController>, omegas: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(PyClosedLoop { inner: closed_loop(plant, controller)? }.sigma(omegas))
}

/// Returns `(controller, report)`.
#[pyfunction]
#[pyo3(signature = (plant, order, starts=5, seed=42, margin=1e-3, init_scale=1.0))]
fn synthesize<'py>(
    py: Python<'py>,
    plant: &PyPlant,
    order: usize,
    starts: usize,
    seed: u64,
    margin: f64,
    init_scale: f64,
) -> PyResult<(PyController, Bound<'py, PyDict>)> {
    let opts = SynthesisOptions { starts, seed, margin, init_scale, ..SynthesisOptions::default() };
    let r = py.detach(|| core_synthesize(&plant.inner, order, &opts)).map_err(to_py)?;
    let report = hinf_dict(py, &r.norm)?;
    report.set_item("abscissa", r.abscissa.abscissa)?;
    report.set_item("starts_tried", r.starts_tried)?;
    report.set_item("start_norms", r.starts.iter().map(|s| s.norm).collect::<Vec<_>>())?;
    Ok((PyController { inner: r.controller }, report))
}

#[pymodule]
fn delayhinf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlant>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyClosedLoop>()?;
    m.add_function(wrap_pyfunction!(hinf_norm, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_abscissa, m)?)?;
    m.add_function(wrap_pyfunction!(sigma, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add("UnstableError", m.py().get_type::<UnstableError>())?;
    m.add("SynthesisError", m.py().get_type::<SynthesisError>())?;
    Ok(())
}
