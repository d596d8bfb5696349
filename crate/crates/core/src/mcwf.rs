//! Monte Carlo wave-function trajectories with particle loss.
//!
//! Each time step either applies a loss jump, chosen with probability
//! `dt ⟨L_j† L_j⟩`, or advances the state with RK4 under the effective
//! Hamiltonian `H − (i/2) Σ_j L_j† L_j` and renormalizes. A jump moves the state
//! into a smaller Dicke manifold and the atom-number dependent `χ(N)`, `δ(N)`
//! are re-evaluated there.
//!
//! Trajectory `i` of an ensemble draws its random numbers from a ChaCha stream
//! keyed by `(master_seed, i)` and ensemble sums are accumulated in trajectory
//! order, so results do not depend on the number of worker threads.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{check_step, default_dt, PhysicalParams, Rk4};
use crate::sequence::{PulseSequence, Segment};
use crate::spin::{SpinMoments, SpinState};
use crate::tridiag::Tridiagonal;

/// Upper bound on the total jump probability in a single step.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

/// Loss process `L = √rate · a↑^p a↓^q`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct JumpChannel {
    pub p: usize,
    pub q: usize,
    pub rate: f64,
}

impl JumpChannel {
    pub fn new(p: usize, q: usize, rate: f64) -> Result<Self> {
        if p + q == 0 {
            return invalid("jump channel must remove at least one atom");
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return invalid("jump rate must be non-negative and finite");
        }
        Ok(Self { p, q, rate })
    }

    /// Two-body spin relaxation removing two `|↑⟩` atoms. The rate is a
    /// placeholder calibrated to ~15 % loss over 30 ms at N = 500.
    pub fn two_body_default() -> Self {
        Self { p: 2, q: 0, rate: 0.013 }
    }

    /// Three-body loss of an interspecies pair plus one `|↑⟩` atom; placeholder
    /// rate as for [`JumpChannel::two_body_default`].
    pub fn three_body_default() -> Self {
        Self { p: 2, q: 1, rate: 3.5e-5 }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::two_body_default(), Self::three_body_default()]
    }

    pub fn atoms_removed(&self) -> usize {
        self.p + self.q
    }

    /// `⟨k| a↑†^p a↓†^q a↑^p a↓^q |k⟩ = k!/(k−p)! · (N−k)!/(N−k−q)!`.
    pub fn diagonal_factor(&self, n: usize, k: usize) -> f64 {
        falling(k, self.p) * falling(n - k, self.q)
    }

    /// `⟨L† L⟩` on a normalized state.
    pub fn expected_rate(&self, state: &SpinState) -> f64 {
        let n = state.atom_count();
        if self.rate == 0.0 || n < self.atoms_removed() {
            return 0.0;
        }
        self.rate * state.amplitudes().iter().enumerate().map(|(k, c)| c.norm_sqr() * self.diagonal_factor(n, k)).sum::<f64>()
    }
}

fn falling(x: usize, m: usize) -> f64 {
    if m > x {
        return 0.0;
    }
    (0..m).map(|i| (x - i) as f64).product()
}

/// Applies `a↑^p a↓^q` and renormalizes; the result has `N − p − q` atoms.
pub fn apply_jump(state: &SpinState, channel: &JumpChannel) -> Result<SpinState> {
    let n = state.atom_count();
    let (p, q) = (channel.p, channel.q);
    if n < p + q {
        return Err(Error::ImpossibleJump { p, q });
    }
    let c = state.amplitudes();
    let out: Vec<C64> = (0..=n - p - q)
        .map(|k_new| {
            let k = k_new + p;
            c[k] * (falling(k, p) * falling(n - k, q)).sqrt()
        })
        .collect();
    if out.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::ImpossibleJump { p, q });
    }
    SpinState::from_amplitudes(out)
}

/// Read-out and shot-to-shot noise.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the per-trajectory detuning offset (rad/s).
    pub sigma_delta: f64,
    /// Detection noise per component (atoms).
    pub sigma_det: f64,
    /// Expected atoms lost during the read-out ramp.
    pub ramp_loss_atoms: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { sigma_delta: 0.0, sigma_det: 0.0, ramp_loss_atoms: 0.0 }
    }

    /// `σ_δ = 2π·0.45 Hz`, `σ_det = 4` atoms, 8 atoms ramp loss.
    pub fn experiment_default() -> Self {
        Self { sigma_delta: TAU * 0.45, sigma_det: 4.0, ramp_loss_atoms: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.sigma_delta, self.sigma_det, self.ramp_loss_atoms];
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return invalid("noise parameters must be non-negative and finite");
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub channel: usize,
    pub atoms_before: usize,
}

/// Effective generator for one timed segment at the current atom number.
struct SegmentDynamics {
    op: Tridiagonal,
    offset: f64,
    dt: f64,
    /// `⟨k|L_j† L_j|k⟩` per channel.
    loss_diag: Vec<Vec<f64>>,
}

impl SegmentDynamics {
    fn new(segment: &Segment, n: usize, channels: &[JumpChannel], extra_delta: f64, state: &SpinState, dt_cap: Option<f64>) -> Result<Self> {
        let mut op = segment.generator(n, extra_delta).expect("timed segment");
        let offset = op.expectation(state.amplitudes()).re;
        let loss_diag: Vec<Vec<f64>> = channels
            .iter()
            .map(|ch| (0..=n).map(|k| if ch.rate == 0.0 { 0.0 } else { ch.rate * ch.diagonal_factor(n, k) }).collect())
            .collect();
        for diag in &loss_diag {
            for (d, g) in op.diag.iter_mut().zip(diag) {
                *d -= C64::new(0.0, 0.5 * g);
            }
        }
        let dt = match dt_cap {
            Some(dt) => {
                check_step(&op, offset, dt)?;
                dt
            }
            None => default_dt(&op, offset),
        };
        Ok(Self { op, offset, dt, loss_diag })
    }
}

/// A single trajectory step of size `dt`. Returns the index of the channel
/// that fired, if any.
fn bernoulli_step<R: Rng + ?Sized>(
    state: &mut SpinState,
    dyn_: &SegmentDynamics,
    channels: &[JumpChannel],
    rk: &mut Rk4,
    dt: f64,
    rng: &mut R,
) -> Result<Option<usize>> {
    let mut probs = [0.0_f64; 8];
    let mut total = 0.0;
    if !channels.is_empty() {
        let c = state.amplitudes();
        for (j, diag) in dyn_.loss_diag.iter().enumerate() {
            let r: f64 = c.iter().zip(diag).map(|(a, g)| a.norm_sqr() * g).sum();
            let p = r * dt;
            if j < probs.len() {
                probs[j] = p;
            }
            total += p;
        }
        if total >= MAX_JUMP_PROBABILITY {
            return Err(Error::JumpProbability { prob: total, limit: MAX_JUMP_PROBABILITY });
        }
    }
    if total > 0.0 {
        let u: f64 = rng.gen();
        if u < total {
            let mut acc = 0.0;
            for (j, ch) in channels.iter().enumerate() {
                acc += probs[j];
                if u < acc && probs[j] > 0.0 {
                    *state = apply_jump(state, ch)?;
                    return Ok(Some(j));
                }
            }
        }
    }
    rk.step(&dyn_.op, dyn_.offset, state.amplitudes_mut(), dt);
    state.renormalize();
    Ok(None)
}

/// One MCWF step under the parameters of a free-evolution segment.
///
/// `noise_offset_delta` is added to `δ(N)`. Returns the new state and the
/// index of the channel that fired, if any.
pub fn step_trajectory<R: Rng + ?Sized>(
    state: &SpinState,
    params: &PhysicalParams,
    channels: &[JumpChannel],
    noise_offset_delta: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(SpinState, Option<usize>)> {
    check_channels(channels)?;
    let seg = Segment::Free { duration: dt, params: *params };
    let dyn_ = SegmentDynamics::new(&seg, state.atom_count(), channels, noise_offset_delta, state, Some(dt))?;
    let mut out = state.clone();
    let mut rk = Rk4::new(out.dim());
    let fired = bernoulli_step(&mut out, &dyn_, channels, &mut rk, dt, rng)?;
    Ok((out, fired))
}

fn check_channels(channels: &[JumpChannel]) -> Result<()> {
    if channels.len() > 8 {
        return invalid("at most 8 jump channels are supported");
    }
    for ch in channels {
        JumpChannel::new(ch.p, ch.q, ch.rate)?;
    }
    Ok(())
}

/// Result of a single trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    pub detuning_offset: f64,
    /// Moments at each requested sample time.
    pub samples: Vec<SpinMoments>,
    pub jumps: Vec<JumpRecord>,
    pub final_state: SpinState,
}

/// Options shared by all trajectories of an ensemble.
#[derive(Clone, Debug)]
pub struct TrajectorySettings {
    pub channels: Vec<JumpChannel>,
    pub noise: NoiseModel,
    /// Integration step; the default step when `None`.
    pub dt: Option<f64>,
    /// Sample times measured from the start of the sequence. Times at or
    /// beyond the sequence end are sampled from the final state.
    pub sample_times: Vec<f64>,
}

/// Runs one trajectory through the whole sequence.
pub fn run_trajectory<R: Rng + ?Sized>(initial: &SpinState, sequence: &PulseSequence, settings: &TrajectorySettings, rng: &mut R) -> Result<TrajectoryOutcome> {
    check_channels(&settings.channels)?;
    let detuning_offset = if settings.noise.sigma_delta > 0.0 {
        Normal::new(0.0, settings.noise.sigma_delta).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng)
    } else {
        0.0
    };
    let times = &settings.sample_times;
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return invalid("sample times must be non-negative and non-decreasing");
    }
    let mut samples = Vec::with_capacity(times.len());
    let mut next = 0usize;
    let mut state = initial.clone();
    let mut jumps = Vec::new();
    let mut clock = 0.0_f64;
    let mut rk = Rk4::new(state.dim());
    let channels = &settings.channels;

    for seg in &sequence.segments {
        if let Some(s) = seg.apply_instant(&state) {
            state = s;
            continue;
        }
        while next < times.len() && times[next] <= clock {
            samples.push(state.moments());
            next += 1;
        }
        let end = clock + seg.duration();
        let mut dyn_ = SegmentDynamics::new(seg, state.atom_count(), channels, detuning_offset, &state, settings.dt)?;
        let mut t = clock;
        while t < end {
            let stop = if next < times.len() && times[next] < end { times[next] } else { end };
            let span = stop - t;
            let steps = (span / dyn_.dt).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            let mut i = 0;
            while i < steps {
                let n_before = state.atom_count();
                let fired = bernoulli_step(&mut state, &dyn_, channels, &mut rk, h, rng)?;
                i += 1;
                if let Some(j) = fired {
                    jumps.push(JumpRecord { time: t + i as f64 * h, channel: j, atoms_before: n_before });
                    dyn_ = SegmentDynamics::new(seg, state.atom_count(), channels, detuning_offset, &state, settings.dt)?;
                    if dyn_.dt < h {
                        // the new manifold needs finer steps for the remainder
                        let t_now = t + i as f64 * h;
                        let rest = stop - t_now;
                        let more = (rest / dyn_.dt).ceil() as usize;
                        t = t_now;
                        let h2 = if more > 0 { rest / more as f64 } else { 0.0 };
                        let mut j2 = 0;
                        while j2 < more {
                            let nb = state.atom_count();
                            let f2 = bernoulli_step(&mut state, &dyn_, channels, &mut rk, h2, rng)?;
                            j2 += 1;
                            if let Some(ch) = f2 {
                                jumps.push(JumpRecord { time: t + j2 as f64 * h2, channel: ch, atoms_before: nb });
                                dyn_ = SegmentDynamics::new(seg, state.atom_count(), channels, detuning_offset, &state, settings.dt)?;
                            }
                        }
                        i = steps;
                    }
                }
            }
            t = stop;
            while next < times.len() && times[next] <= t && t < end {
                samples.push(state.moments());
                next += 1;
            }
        }
        clock = end;
    }
    while next < times.len() {
        samples.push(state.moments());
        next += 1;
    }
    Ok(TrajectoryOutcome { detuning_offset, samples, jumps, final_state: state })
}

/// Random stream of trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Trajectory-averaged moments on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    /// Trajectory mean of `⟨J_a⟩` per time.
    pub mean_j: Vec<[f64; 3]>,
    /// Trajectory mean of `½⟨{J_a, J_b}⟩` per time.
    pub second: Vec<[[f64; 3]; 3]>,
    pub mean_n: Vec<f64>,
    /// Unbiased variance of the atom number across trajectories.
    pub var_n: Vec<f64>,
    pub trajectory_count: usize,
    pub master_seed: u64,
    pub total_jumps: usize,
    /// Atoms removed by jumps, summed over trajectories.
    pub atoms_lost: usize,
}

impl TrajectoryEnsemble {
    /// Mixture moments at time index `i`; the atom number is the ensemble mean.
    pub fn moments(&self, i: usize) -> SpinMoments {
        SpinMoments { mean: self.mean_j[i], second: self.second[i], atom_number: self.mean_n[i] }
    }

    /// `Var(J_a) = E[⟨J_a²⟩] − E[⟨J_a⟩]²` at time index `i`.
    pub fn variance(&self, i: usize, a: usize) -> f64 {
        self.second[i][a][a] - self.mean_j[i][a] * self.mean_j[i][a]
    }

    pub const CSV_HEADER: &'static str = "time_s,mean_Jx,mean_Jy,mean_Jz,m2_xx,m2_yy,m2_zz,m2_yz,m2_xy,m2_xz,mean_N,var_N,n_traj";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            let m = &self.mean_j[i];
            let s = &self.second[i];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.times[i], m[0], m[1], m[2], s[0][0], s[1][1], s[2][2], s[1][2], s[0][1], s[0][2], self.mean_n[i], self.var_n[i], self.trajectory_count
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Clone, Debug, Default)]
struct Accumulator {
    mean: Vec<[f64; 3]>,
    second: Vec<[[f64; 3]; 3]>,
    n: Vec<f64>,
    n2: Vec<f64>,
    count: usize,
    jumps: usize,
    lost: usize,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { mean: vec![[0.0; 3]; len], second: vec![[[0.0; 3]; 3]; len], n: vec![0.0; len], n2: vec![0.0; len], ..Default::default() }
    }

    fn add(&mut self, out: &TrajectoryOutcome, initial_n: usize) {
        for (i, m) in out.samples.iter().enumerate() {
            for a in 0..3 {
                self.mean[i][a] += m.mean[a];
                for b in 0..3 {
                    self.second[i][a][b] += m.second[a][b];
                }
            }
            self.n[i] += m.atom_number;
            self.n2[i] += m.atom_number * m.atom_number;
        }
        self.count += 1;
        self.jumps += out.jumps.len();
        self.lost += initial_n - out.final_state.atom_count();
    }
}

/// Ensemble settings.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub settings: TrajectorySettings,
    pub trajectories: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

const CHUNK: usize = 64;

/// Runs `trajectories` independent trajectories and averages their moments.
pub fn run_ensemble(initial: &SpinState, sequence: &PulseSequence, spec: &EnsembleSpec) -> Result<TrajectoryEnsemble> {
    if spec.trajectories == 0 {
        return invalid("ensemble needs at least one trajectory");
    }
    spec.settings.noise.validate()?;
    check_channels(&spec.settings.channels)?;
    let work = || -> Result<TrajectoryEnsemble> {
        let len = spec.settings.sample_times.len();
        let mut acc = Accumulator::new(len);
        let mut start = 0usize;
        while start < spec.trajectories {
            let end = (start + CHUNK).min(spec.trajectories);
            let outcomes: Vec<Result<TrajectoryOutcome>> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let mut rng = trajectory_rng(spec.master_seed, i as u64);
                    run_trajectory(initial, sequence, &spec.settings, &mut rng)
                })
                .collect();
            for o in outcomes {
                acc.add(&o?, initial.atom_count());
            }
            start = end;
        }
        Ok(finish(acc, spec))
    };
    match spec.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(work)
        }
        None => work(),
    }
}

fn finish(acc: Accumulator, spec: &EnsembleSpec) -> TrajectoryEnsemble {
    let c = acc.count as f64;
    let len = acc.mean.len();
    let mut mean_j = vec![[0.0; 3]; len];
    let mut second = vec![[[0.0; 3]; 3]; len];
    let mut mean_n = vec![0.0; len];
    let mut var_n = vec![0.0; len];
    for i in 0..len {
        for a in 0..3 {
            mean_j[i][a] = acc.mean[i][a] / c;
            for b in 0..3 {
                second[i][a][b] = acc.second[i][a][b] / c;
            }
        }
        mean_n[i] = acc.n[i] / c;
        var_n[i] = if acc.count > 1 { ((acc.n2[i] - c * mean_n[i] * mean_n[i]) / (c - 1.0)).max(0.0) } else { 0.0 };
    }
    TrajectoryEnsemble {
        times: spec.settings.sample_times.clone(),
        mean_j,
        second,
        mean_n,
        var_n,
        trajectory_count: acc.count,
        master_seed: spec.master_seed,
        total_jumps: acc.jumps,
        atoms_lost: acc.lost,
    }
}
