//! Piecewise-constant pulse sequences: preparation pulse, free evolution with
//! an optional spin echo, and tomography rotations.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Result};
use crate::hamiltonian::{generator, propagate, unstable_phase, PhysicalParams};
use crate::spin::{Axis, SpinState};
use crate::tridiag::Tridiagonal;

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Segment {
    /// Evolution under `χ(N)J_z² − ΩJ_x + δ(N)J_z`.
    Free { duration: f64, params: PhysicalParams },
    /// Evolution under `χ(N)J_z² − rabi (cos ψ J_x + sin ψ J_y) + δ(N)J_z`;
    /// `params.omega` is ignored. A pulse of duration `θ/rabi` rotates by `θ`
    /// about the equatorial axis at azimuth `axis_phase + π`.
    Pulse { duration: f64, rabi: f64, axis_phase: f64, params: PhysicalParams },
    /// Instantaneous `exp(−i angle J_axis)`.
    Rotation { axis: Axis, angle: f64 },
    /// Instantaneous `exp(−i angle (cos ψ J_x + sin ψ J_y))`.
    EquatorialRotation { psi: f64, angle: f64 },
    /// Tomography readout rotation about `x`.
    Tomography { angle: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Free { duration, .. } | Segment::Pulse { duration, .. } => duration,
            _ => 0.0,
        }
    }

    /// Finite pulse that rotates by `angle` about the equatorial axis at `psi`.
    pub fn rotation_pulse(psi: f64, angle: f64, rabi: f64, params: PhysicalParams) -> Segment {
        let (angle, psi) = if angle < 0.0 { (-angle, psi + PI) } else { (angle, psi) };
        Segment::Pulse { duration: angle / rabi, rabi, axis_phase: psi + PI, params }
    }

    /// Generator for `n` atoms with an extra detuning offset, or `None` for
    /// instantaneous segments.
    pub fn generator(&self, n: usize, extra_delta: f64) -> Option<Tridiagonal> {
        match *self {
            Segment::Free { params, .. } => {
                Some(generator(n, params.chi(n), params.delta(n) + extra_delta, -params.omega, 0.0))
            }
            Segment::Pulse { rabi, axis_phase, params, .. } => {
                Some(generator(n, params.chi(n), params.delta(n) + extra_delta, -rabi, axis_phase))
            }
            _ => None,
        }
    }

    /// Applies an instantaneous segment. Timed segments return `None`.
    pub fn apply_instant(&self, state: &SpinState) -> Option<SpinState> {
        match *self {
            Segment::Rotation { axis, angle } => Some(state.rotate(axis, angle)),
            Segment::EquatorialRotation { psi, angle } => Some(state.rotate_equatorial(psi, angle)),
            Segment::Tomography { angle } => Some(state.rotate(Axis::X, angle)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Segment::Free { duration, params } => {
                params.validate()?;
                check_duration(duration)
            }
            Segment::Pulse { duration, rabi, axis_phase, params } => {
                params.validate()?;
                if !rabi.is_finite() || !axis_phase.is_finite() {
                    return invalid("pulse Rabi frequency and phase must be finite");
                }
                check_duration(duration)
            }
            Segment::Rotation { angle, .. } | Segment::Tomography { angle } => check_angle(angle),
            Segment::EquatorialRotation { psi, angle } => {
                check_angle(psi)?;
                check_angle(angle)
            }
        }
    }
}

fn check_duration(d: f64) -> Result<()> {
    if d >= 0.0 && d.is_finite() {
        Ok(())
    } else {
        invalid(format!("segment duration must be non-negative and finite, got {d}"))
    }
}

fn check_angle(a: f64) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        invalid("rotation angle must be finite")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
}

impl PulseSequence {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            s.validate()?;
        }
        Ok(Self { segments })
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn push(&mut self, segment: Segment) -> Result<()> {
        segment.validate()?;
        self.segments.push(segment);
        Ok(())
    }
}

/// Applies the segments in order. `dt` caps the integration step of timed
/// segments (default step when `None`).
pub fn run_sequence(state: &SpinState, sequence: &PulseSequence, dt: Option<f64>) -> Result<SpinState> {
    let mut cur = state.clone();
    for seg in &sequence.segments {
        cur = match seg.apply_instant(&cur) {
            Some(s) => s,
            None => {
                let op = seg.generator(cur.atom_count(), 0.0).expect("timed segment");
                propagate(&cur, &op, seg.duration(), dt)?
            }
        };
    }
    Ok(cur)
}

/// How preparation and echo pulses are realized.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum PulseMode {
    /// Ideal instantaneous rotations; the initial state is the coherent state
    /// on the equator at the preparation azimuth.
    Instant,
    /// Finite pulses in the presence of the nonlinearity, starting from all
    /// atoms in `|↓⟩`.
    Finite { prep_rabi: f64, echo_rabi: f64 },
}

/// Preparation, evolution and echo protocol for twist-and-turn or one-axis
/// twisting runs.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Protocol {
    /// Parameters during the evolution; `omega = 0` gives one-axis twisting.
    pub params: PhysicalParams,
    /// Equatorial azimuth of the prepared coherent state.
    pub prep_phase: f64,
    pub echo: bool,
    pub pulses: PulseMode,
}

impl Protocol {
    /// Protocol preparing on the unstable fixed point of `params` at `n`
    /// atoms (see [`preparation_phase`]).
    pub fn new(params: PhysicalParams, n: usize, echo: bool, pulses: PulseMode) -> Self {
        Self { params, prep_phase: preparation_phase(&params, n), echo, pulses }
    }

    pub fn initial_state(&self, n: usize) -> Result<SpinState> {
        match self.pulses {
            PulseMode::Instant => SpinState::coherent(n, FRAC_PI_2, self.prep_phase),
            PulseMode::Finite { .. } => SpinState::basis(n, 0),
        }
    }

    /// Full sequence for an evolution time `t` (excluding pulse durations).
    pub fn sequence(&self, t: f64) -> Result<PulseSequence> {
        let mut segs = Vec::new();
        if let PulseMode::Finite { prep_rabi, .. } = self.pulses {
            // Rotating −z by +π/2 about the axis at ψ lands on azimuth ψ + π/2.
            segs.push(Segment::rotation_pulse(self.prep_phase - FRAC_PI_2, FRAC_PI_2, prep_rabi, self.params));
        }
        if self.echo {
            segs.push(Segment::Free { duration: 0.5 * t, params: self.params });
            segs.push(match self.pulses {
                PulseMode::Instant => Segment::Rotation { axis: Axis::X, angle: PI },
                PulseMode::Finite { echo_rabi, .. } => Segment::rotation_pulse(0.0, PI, echo_rabi, self.params),
            });
            segs.push(Segment::Free { duration: 0.5 * t, params: self.params });
        } else {
            segs.push(Segment::Free { duration: t, params: self.params });
        }
        PulseSequence::new(segs)
    }
}

/// Azimuth at which the initial coherent state is placed: the unstable fixed
/// point of the evolution parameters, evaluated with the detuning ignored.
/// When no unstable point exists (`Λ ≤ 1`, or one-axis twisting) the
/// twist-and-turn convention `π` is kept so both schemes share a preparation.
pub fn preparation_phase(params: &PhysicalParams, n: usize) -> f64 {
    let undetuned = PhysicalParams { delta_ext: 0.0, delta_coeff: 0.0, ..*params };
    unstable_phase(&undetuned, n).unwrap_or(if params.omega < 0.0 { 0.0 } else { PI })
}
