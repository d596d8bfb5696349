//! Python bindings for the twist-and-turn simulator.
//!
//! Rates are angular frequencies in rad/s and times are in seconds, as in
//! the Rust API.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tnt_core::analysis::{self, half_turn_grid};
use tnt_core::hamiltonian::{self, ChiLaw};
use tnt_core::mcwf::{JumpChannel, NoiseModel};
use tnt_core::meanfield::{self, Stability};
use tnt_core::pipeline::{self, EnsembleOptions, SqueezingPoint};
use tnt_core::sequence::{PulseMode, Protocol};
use tnt_core::spin::{self, Axis};

create_exception!(tntsim, SimulationError, PyValueError);

fn err(e: tnt_core::Error) -> PyErr {
    SimulationError::new_err(e.to_string())
}

fn axis(name: &str) -> PyResult<Axis> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown axis {name:?}; use x, y or z")))
}

/// Hamiltonian couplings, possibly depending on the atom number.
#[pyclass(module = "tntsim", frozen)]
#[derive(Clone)]
pub struct PhysicalParams {
    inner: hamiltonian::PhysicalParams,
}

#[pymethods]
impl PhysicalParams {
    /// Constant `chi`, `omega` and detuning `delta`.
    #[new]
    #[pyo3(signature = (chi, omega, delta = 0.0))]
    fn new(chi: f64, omega: f64, delta: f64) -> PyResult<Self> {
        let inner = hamiltonian::PhysicalParams::constant(chi, omega, delta);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// `chi(N) = n_chi / N`.
    #[staticmethod]
    #[pyo3(signature = (n_chi, omega, delta = 0.0))]
    fn fixed_product(n_chi: f64, omega: f64, delta: f64) -> PyResult<Self> {
        let inner = hamiltonian::PhysicalParams { chi: ChiLaw::FixedProduct { n_chi }, ..hamiltonian::PhysicalParams::constant(0.0, omega, delta) };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ideal_default() -> Self {
        Self { inner: hamiltonian::PhysicalParams::ideal_default() }
    }

    #[staticmethod]
    fn experiment_default() -> Self {
        Self { inner: hamiltonian::PhysicalParams::experiment_default() }
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega
    }

    fn chi(&self, n: usize) -> f64 {
        self.inner.chi(n)
    }

    fn delta(&self, n: usize) -> f64 {
        self.inner.delta(n)
    }

    /// `|N chi(N) / omega|`.
    fn lambda_at(&self, n: usize) -> f64 {
        self.inner.lambda(n)
    }

    fn one_axis_twisting(&self) -> Self {
        Self { inner: self.inner.one_axis_twisting() }
    }

    fn __repr__(&self) -> String {
        format!("PhysicalParams({:?})", self.inner)
    }
}

/// First and second moments of the collective spin.
#[pyclass(module = "tntsim", frozen)]
#[derive(Clone)]
pub struct SpinMoments {
    inner: spin::SpinMoments,
}

#[pymethods]
impl SpinMoments {
    #[getter]
    fn atom_number(&self) -> f64 {
        self.inner.atom_number
    }

    /// `(<Jx>, <Jy>, <Jz>)`.
    #[getter]
    fn mean(&self) -> (f64, f64, f64) {
        let m = self.inner.mean;
        (m[0], m[1], m[2])
    }

    /// Symmetrized covariance matrix as nested lists.
    fn covariance(&self) -> Vec<Vec<f64>> {
        self.inner.covariance().iter().map(|r| r.to_vec()).collect()
    }

    fn variance(&self, axis_name: &str) -> PyResult<f64> {
        Ok(self.inner.variance(axis(axis_name)?))
    }

    fn mean_length(&self) -> f64 {
        self.inner.mean_length()
    }

    /// Squeezing figures of merit as a dict.
    fn squeezing<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        point_dict(py, &SqueezingPoint::from_moments(0.0, &self.inner).map_err(err)?)
    }
}

/// Pure state in the symmetric (Dicke) subspace.
#[pyclass(module = "tntsim")]
#[derive(Clone)]
pub struct SpinState {
    inner: spin::SpinState,
}

#[pymethods]
impl SpinState {
    /// Amplitudes indexed by the number of atoms in the upper mode.
    #[new]
    fn new(amplitudes: Vec<Complex64>) -> PyResult<Self> {
        Ok(Self { inner: spin::SpinState::from_amplitudes(amplitudes).map_err(err)? })
    }

    #[staticmethod]
    fn coherent(n: usize, theta: f64, phi: f64) -> PyResult<Self> {
        Ok(Self { inner: spin::SpinState::coherent(n, theta, phi).map_err(err)? })
    }

    #[staticmethod]
    fn basis(n: usize, k: usize) -> PyResult<Self> {
        Ok(Self { inner: spin::SpinState::basis(n, k).map_err(err)? })
    }

    #[getter]
    fn atom_count(&self) -> usize {
        self.inner.atom_count()
    }

    fn amplitudes(&self) -> Vec<Complex64> {
        self.inner.amplitudes().to_vec()
    }

    fn probabilities(&self) -> Vec<f64> {
        self.inner.probabilities()
    }

    fn norm_sqr(&self) -> f64 {
        self.inner.norm_sqr()
    }

    fn fidelity(&self, other: &SpinState) -> f64 {
        self.inner.fidelity(&other.inner)
    }

    fn moments(&self) -> SpinMoments {
        SpinMoments { inner: self.inner.moments() }
    }

    /// `exp(-i angle J_axis) |psi>`.
    fn rotate(&self, axis_name: &str, angle: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.rotate(axis(axis_name)?, angle) })
    }

    /// Free evolution under `params` for `duration` seconds.
    #[pyo3(signature = (params, duration, dt = None))]
    fn evolve(&self, py: Python<'_>, params: &PhysicalParams, duration: f64, dt: Option<f64>) -> PyResult<Self> {
        let p = params.inner;
        let inner = py.allow_threads(|| hamiltonian::evolve(&self.inner, &p, duration, dt)).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("SpinState(atom_count={})", self.inner.atom_count())
    }
}

fn point_dict<'py>(py: Python<'py>, p: &SqueezingPoint) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("t", p.time)?;
    d.set_item("xi2_min", p.xi2_min)?;
    d.set_item("xi2_max", p.xi2_max)?;
    d.set_item("alpha_min", p.alpha_min)?;
    d.set_item("cos_phi", p.cos_phi)?;
    d.set_item("xi2_s", p.xi2_s)?;
    d.set_item("xi2_s_db", p.xi2_s_db())?;
    d.set_item("mean_n", p.mean_n)?;
    Ok(d)
}

fn protocol(params: &PhysicalParams, n: usize, echo: bool, pulse_rabi: Option<f64>) -> Protocol {
    let pulses = match pulse_rabi {
        Some(r) => PulseMode::Finite { prep_rabi: r, echo_rabi: r },
        None => PulseMode::Instant,
    };
    Protocol::new(params.inner, n, echo, pulses)
}

/// Linear power ratio in dB.
#[pyfunction]
fn to_db(x: f64) -> f64 {
    analysis::to_db(x)
}

/// Variance scan over `angles` read-out rotations in `[0, pi)`.
#[pyfunction]
#[pyo3(signature = (state, angles = 180))]
fn tomography<'py>(py: Python<'py>, state: &SpinState, angles: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::tomography_from_moments(&state.inner.moments(), &half_turn_grid(0.0, angles)).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("angles", r.angles)?;
    d.set_item("xi2_n", r.xi2_n)?;
    d.set_item("xi2_min", r.xi2_min)?;
    d.set_item("xi2_max", r.xi2_max)?;
    d.set_item("alpha_min", r.alpha_min)?;
    Ok(d)
}

/// Closed-system protocol runs at each time; `pulse_rabi` switches to
/// finite pulses with that Rabi rate.
#[pyfunction]
#[pyo3(signature = (params, n, times, echo = false, pulse_rabi = None, dt = None))]
fn squeezing_sweep<'py>(
    py: Python<'py>,
    params: &PhysicalParams,
    n: usize,
    times: Vec<f64>,
    echo: bool,
    pulse_rabi: Option<f64>,
    dt: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let proto = protocol(params, n, echo, pulse_rabi);
    let points = py.allow_threads(|| pipeline::ideal_sweep(&proto, n, &times, dt)).map_err(err)?;
    points.iter().map(|p| point_dict(py, p)).collect()
}

/// Quantum-trajectory ensemble with `channels` given as `(p, q, rate)`
/// tuples for the loss operator `a_up^p a_down^q`.
#[pyfunction]
#[pyo3(signature = (params, n, times, channels, trajectories = 200, seed = 0, echo = true, sigma_delta = 0.0, dt = None, workers = None))]
#[allow(clippy::too_many_arguments)]
fn ensemble<'py>(
    py: Python<'py>,
    params: &PhysicalParams,
    n: usize,
    times: Vec<f64>,
    channels: Vec<(usize, usize, f64)>,
    trajectories: usize,
    seed: u64,
    echo: bool,
    sigma_delta: f64,
    dt: Option<f64>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let channels = channels.into_iter().map(|(p, q, r)| JumpChannel::new(p, q, r)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let opts = EnsembleOptions {
        channels,
        noise: NoiseModel { sigma_delta, ..NoiseModel::none() },
        trajectories,
        master_seed: seed,
        workers,
        dt,
        readout: false,
    };
    let proto = protocol(params, n, echo, None);
    let (points, ens) = py.allow_threads(|| pipeline::ensemble_sweep(&proto, n, &times, &opts)).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("points", points.iter().map(|p| point_dict(py, p)).collect::<PyResult<Vec<_>>>()?)?;
    d.set_item("mean_n", ens.iter().flat_map(|e| e.mean_n.clone()).collect::<Vec<_>>())?;
    d.set_item("var_n", ens.iter().flat_map(|e| e.var_n.clone()).collect::<Vec<_>>())?;
    d.set_item("total_jumps", ens.iter().map(|e| e.total_jumps).sum::<usize>())?;
    d.set_item("atoms_lost", ens.iter().map(|e| e.atoms_lost).sum::<usize>())?;
    Ok(d)
}

/// Fixed points of the classical flow as `(z, phi, stability, eigenvalues)`.
#[pyfunction]
fn fixed_points(params: &PhysicalParams, n: usize) -> PyResult<Vec<(f64, f64, &'static str, (Complex64, Complex64))>> {
    let fps = meanfield::find_fixed_points(&params.inner, n).map_err(err)?;
    Ok(fps
        .into_iter()
        .map(|f| {
            let s = match f.stability {
                Stability::Center => "center",
                Stability::Saddle => "saddle",
            };
            (f.point.z, f.point.phi, s, (f.eigenvalues[0], f.eigenvalues[1]))
        })
        .collect())
}

#[pymodule]
pub fn tntsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", tnt_core::VERSION)?;
    m.add("SimulationError", m.py().get_type_bound::<SimulationError>())?;
    m.add_class::<PhysicalParams>()?;
    m.add_class::<SpinState>()?;
    m.add_class::<SpinMoments>()?;
    m.add_function(wrap_pyfunction!(to_db, m)?)?;
    m.add_function(wrap_pyfunction!(tomography, m)?)?;
    m.add_function(wrap_pyfunction!(squeezing_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_points, m)?)?;
    Ok(())
}
