//! The two-mode Hamiltonian `H = χ J_z² − Ω J_x + δ J_z` and its time evolution.
//!
//! All frequencies are angular frequencies in rad/s and times are in seconds.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;

use crate::error::{invalid, Error, Result};
use crate::spin::{equatorial_generator, jz_value, SpinState};
use crate::tridiag::Tridiagonal;

/// Upper bound on the default RK4 step.
pub const DEFAULT_MAX_DT: f64 = 1e-6;
/// Default step as a fraction of `1 / ‖H − E₀‖∞`.
pub const DEFAULT_STEP_FRACTION: f64 = 0.1;
/// Hard stability limit on `‖H − E₀‖∞ · dt`.
pub const MAX_STEP_PRODUCT: f64 = 0.5;

/// Atom-number dependence of the nonlinearity.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum ChiLaw {
    /// `χ(N) = coeff / √N`.
    InverseSqrt { coeff: f64 },
    /// `χ(N) = n_chi / N`, i.e. a fixed product `Nχ`.
    FixedProduct { n_chi: f64 },
    /// `χ(N) = chi`.
    Constant { chi: f64 },
}

impl ChiLaw {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            ChiLaw::InverseSqrt { coeff } => coeff / n.max(1.0).sqrt(),
            ChiLaw::FixedProduct { n_chi } => n_chi / n.max(1.0),
            ChiLaw::Constant { chi } => chi,
        }
    }
}

/// Physical parameters with their atom-number scaling laws.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    pub chi: ChiLaw,
    /// Linear coupling Ω; its sign carries the coupling axis orientation.
    pub omega: f64,
    /// External detuning offset.
    pub delta_ext: f64,
    /// `δ(N) = delta_ext − delta_coeff (√N − √n_ref)`.
    pub delta_coeff: f64,
    pub n_ref: f64,
}

impl PhysicalParams {
    /// Constant parameters with no atom-number dependence.
    pub fn constant(chi: f64, omega: f64, delta: f64) -> Self {
        Self { chi: ChiLaw::Constant { chi }, omega, delta_ext: delta, delta_coeff: 0.0, n_ref: 0.0 }
    }

    /// Time-averaged ideal-theory parameters: `Nχ = 2π·30 Hz`, `Ω = 2π·19 Hz`, `δ = 0`.
    pub fn ideal_default() -> Self {
        Self {
            chi: ChiLaw::FixedProduct { n_chi: TAU * 30.0 },
            omega: TAU * 19.0,
            delta_ext: 0.0,
            delta_coeff: 0.0,
            n_ref: 550.0,
        }
    }

    /// Atom-number-dependent parameters used for the lossy simulations:
    /// `χ = 2π·1.43 Hz/√N`, `Ω = 2π·19 Hz`, `δ = −2π·0.63 (√N − √550) Hz`.
    pub fn experiment_default() -> Self {
        Self {
            chi: ChiLaw::InverseSqrt { coeff: TAU * 1.43 },
            omega: TAU * 19.0,
            delta_ext: 0.0,
            delta_coeff: TAU * 0.63,
            n_ref: 550.0,
        }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    /// Same parameters with the coupling switched off (one-axis twisting).
    pub fn one_axis_twisting(self) -> Self {
        self.with_omega(0.0)
    }

    pub fn chi(&self, n: usize) -> f64 {
        self.chi.eval(n as f64)
    }

    pub fn delta(&self, n: usize) -> f64 {
        if self.delta_coeff == 0.0 {
            self.delta_ext
        } else {
            self.delta_ext - self.delta_coeff * ((n as f64).sqrt() - self.n_ref.sqrt())
        }
    }

    /// `Λ = |N χ(N) / Ω|`; infinite when Ω = 0.
    pub fn lambda(&self, n: usize) -> f64 {
        (n as f64 * self.chi(n) / self.omega).abs()
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.omega, self.delta_ext, self.delta_coeff, self.n_ref, self.chi.eval(1.0)];
        if vals.iter().any(|v| !v.is_finite()) {
            return invalid("physical parameters must be finite");
        }
        if self.n_ref < 0.0 {
            return invalid("reference atom number must be non-negative");
        }
        Ok(())
    }
}

/// `χ J_z² + δ J_z + rate (cos ψ J_x + sin ψ J_y)` for `N` atoms.
pub fn generator(n: usize, chi: f64, delta: f64, rate: f64, psi: f64) -> Tridiagonal {
    let mut op = equatorial_generator(n, psi).scaled(rate);
    for (k, d) in op.diag.iter_mut().enumerate() {
        let m = jz_value(n, k);
        *d = C64::new(chi * m * m + delta * m, 0.0);
    }
    op
}

/// `H = χ(N) J_z² − Ω J_x + δ(N) J_z` in the occupation basis.
pub fn build_hamiltonian(params: &PhysicalParams, n: usize) -> Tridiagonal {
    generator(n, params.chi(n), params.delta(n), -params.omega, 0.0)
}

/// Default RK4 step for a generator after subtracting the energy offset.
pub fn default_dt(op: &Tridiagonal, offset: f64) -> f64 {
    let radius = shifted_norm(op, offset);
    if radius == 0.0 {
        DEFAULT_MAX_DT
    } else {
        DEFAULT_MAX_DT.min(DEFAULT_STEP_FRACTION / radius)
    }
}

fn shifted_norm(op: &Tridiagonal, offset: f64) -> f64 {
    let mut shifted = op.clone();
    shifted.shift_diag(C64::new(-offset, 0.0));
    shifted.inf_norm()
}

pub(crate) fn check_step(op: &Tridiagonal, offset: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return invalid(format!("time step must be positive and finite, got {dt}"));
    }
    let radius = shifted_norm(op, offset);
    if radius * dt >= MAX_STEP_PRODUCT {
        return Err(Error::StepSize { dt, radius, suggested: DEFAULT_STEP_FRACTION / radius });
    }
    Ok(())
}

/// Work buffers for classic RK4 on `dψ/dt = −i (A − E₀) ψ`.
#[derive(Clone, Debug, Default)]
pub struct Rk4 {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); dim];
        Self { k: [z.clone(), z.clone(), z.clone(), z.clone()], tmp: z }
    }

    fn derivative(op: &Tridiagonal, offset: f64, x: &[C64], out: &mut [C64]) {
        op.apply(x, out);
        for (o, v) in out.iter_mut().zip(x) {
            // −i (A − E₀) x
            let w = *o - v * offset;
            *o = C64::new(w.im, -w.re);
        }
    }

    /// One step of size `dt`; the state is not renormalized.
    pub fn step(&mut self, op: &Tridiagonal, offset: f64, psi: &mut [C64], dt: f64) {
        let n = psi.len();
        if self.tmp.len() != n {
            *self = Rk4::new(n);
        }
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        Self::derivative(op, offset, psi, k1);
        for i in 0..n {
            tmp[i] = psi[i] + k1[i] * (0.5 * dt);
        }
        Self::derivative(op, offset, tmp, k2);
        for i in 0..n {
            tmp[i] = psi[i] + k2[i] * (0.5 * dt);
        }
        Self::derivative(op, offset, tmp, k3);
        for i in 0..n {
            tmp[i] = psi[i] + k3[i] * dt;
        }
        Self::derivative(op, offset, tmp, k4);
        let w = dt / 6.0;
        for i in 0..n {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
    }
}

/// Integrates `state` under the Hermitian generator `op` for `duration`,
/// subtracting `⟨op⟩` as a global energy offset, with steps no longer than
/// `dt` (or the default step when `None`). Renormalizes once at the end.
pub fn propagate(state: &SpinState, op: &Tridiagonal, duration: f64, dt: Option<f64>) -> Result<SpinState> {
    if !(duration >= 0.0) || !duration.is_finite() {
        return invalid(format!("duration must be non-negative and finite, got {duration}"));
    }
    if op.dim() != state.dim() {
        return invalid("generator dimension does not match the state");
    }
    let offset = op.expectation(state.amplitudes()).re;
    let dt = match dt {
        Some(dt) => {
            check_step(op, offset, dt)?;
            dt
        }
        None => default_dt(op, offset),
    };
    let mut out = state.clone();
    if duration == 0.0 {
        return Ok(out);
    }
    let steps = (duration / dt).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let mut rk = Rk4::new(state.dim());
    for _ in 0..steps {
        rk.step(op, offset, out.amplitudes_mut(), h);
    }
    out.renormalize();
    Ok(out)
}

/// Evolves under `build_hamiltonian(params, N)` for `duration` seconds.
pub fn evolve(state: &SpinState, params: &PhysicalParams, duration: f64, dt: Option<f64>) -> Result<SpinState> {
    let op = build_hamiltonian(params, state.atom_count());
    propagate(state, &op, duration, dt)
}

/// Evolves and reports the state at each (non-decreasing) sample time.
pub fn evolve_sampled(state: &SpinState, params: &PhysicalParams, times: &[f64], dt: Option<f64>) -> Result<Vec<SpinState>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("sample times must be non-decreasing");
    }
    let op = build_hamiltonian(params, state.atom_count());
    let mut out = Vec::with_capacity(times.len());
    let mut cur = state.clone();
    let mut t = 0.0;
    for &ts in times {
        if ts < 0.0 {
            return invalid("sample times must be non-negative");
        }
        cur = propagate(&cur, &op, ts - t, dt)?;
        t = ts;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Exact propagation of a real-symmetric Hamiltonian by dense diagonalization.
///
/// Valid for time-independent segments without a `J_y` component; intended
/// for `N` up to a couple of thousand.
#[derive(Clone, Debug)]
pub struct ExactPropagator {
    eigenvalues: Vec<f64>,
    eigenvectors: nalgebra::DMatrix<f64>,
}

impl ExactPropagator {
    pub fn new(op: &Tridiagonal) -> Result<Self> {
        if op.diag.iter().any(|d| d.im != 0.0) || op.sub.iter().any(|s| s.im != 0.0) {
            return invalid("exact propagation needs a real symmetric generator");
        }
        let n = op.dim();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = op.diag[k].re;
        }
        for k in 0..n.saturating_sub(1) {
            m[(k + 1, k)] = op.sub[k].re;
            m[(k, k + 1)] = op.sub[k].re;
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        Ok(Self { eigenvalues: eig.eigenvalues.iter().copied().collect(), eigenvectors: eig.eigenvectors })
    }

    pub fn for_params(params: &PhysicalParams, n: usize) -> Result<Self> {
        Self::new(&build_hamiltonian(params, n))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn propagate(&self, state: &SpinState, t: f64) -> Result<SpinState> {
        let n = self.eigenvalues.len();
        if state.dim() != n {
            return invalid("state dimension does not match the propagator");
        }
        let v = &self.eigenvectors;
        let a = state.amplitudes();
        let mut coeff = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..n {
                s += a[k] * v[(k, j)];
            }
            coeff[j] = s * C64::from_polar(1.0, -self.eigenvalues[j] * t);
        }
        let mut out = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..n {
                s += coeff[j] * v[(k, j)];
            }
            out[k] = s;
        }
        SpinState::from_amplitudes(out)
    }
}

/// Azimuth of the unstable equatorial fixed point: `π` when `χΩ > 0` under
/// `H = χJ_z² − ΩJ_x`, `0` otherwise. Requires `Λ > 1` and `δ(N) = 0`.
pub fn unstable_phase(params: &PhysicalParams, n: usize) -> Result<f64> {
    let lambda = params.lambda(n);
    if params.omega == 0.0 || !(lambda > 1.0) || params.delta(n) != 0.0 {
        return Err(Error::NoUnstablePoint { lambda });
    }
    Ok(if params.chi(n) * params.omega > 0.0 { PI } else { 0.0 })
}
