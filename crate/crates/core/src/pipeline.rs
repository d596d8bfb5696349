//! End-to-end runs: squeezing-versus-time sweeps in ideal, trajectory and
//! experiment modes, lattice arrays and atom-number scans.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::analysis::{self, half_turn_grid, to_db, Counts, NoiseSubtraction, Shot, ShotTable};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{evolve_sampled, PhysicalParams};
use crate::mcwf::{run_ensemble, trajectory_rng, EnsembleSpec, JumpChannel, NoiseModel, TrajectoryEnsemble, TrajectorySettings};
use crate::sequence::{run_sequence, PulseMode, Protocol};
use crate::spin::{Axis, OccupationSampler, SpinMoments, SpinState};

/// Angle grid used for tomography scans in summaries (0.5° spacing).
pub const SUMMARY_GRID_POINTS: usize = 360;

/// Default fixed tomography angle for array studies (52°).
pub const ARRAY_ALPHA_DEFAULT: f64 = 52.0 * PI / 180.0;

/// Squeezing characteristics of a state at one evolution time.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SqueezingPoint {
    pub time: f64,
    pub xi2_min: f64,
    pub xi2_max: f64,
    /// `None` when the transverse noise is isotropic.
    pub alpha_min: Option<f64>,
    /// `2|⟨J⟩|/N`.
    pub cos_phi: f64,
    /// `None` when the mean spin vanishes.
    pub xi2_s: Option<f64>,
    pub mean_n: f64,
}

impl SqueezingPoint {
    pub fn from_moments(time: f64, m: &SpinMoments) -> Result<Self> {
        let tomo = analysis::tomography_from_moments(m, &half_turn_grid(0.0, SUMMARY_GRID_POINTS))?;
        let a = tomo.analytic.expect("moment path is analytic");
        let cos_phi = 2.0 * m.mean_length() / m.atom_number;
        let xi2_s = if cos_phi > 0.0 { Some(analysis::spin_squeezing(a.xi2_min, cos_phi.min(1.0))?) } else { None };
        Ok(Self { time, xi2_min: a.xi2_min, xi2_max: a.xi2_max, alpha_min: a.alpha_min, cos_phi, xi2_s, mean_n: m.atom_number })
    }

    pub fn xi2_s_db(&self) -> Option<f64> {
        self.xi2_s.map(to_db)
    }

    pub const CSV_HEADER: &'static str = "t,xi2_min_db,xi2_s_db,alpha_min_deg,xi2_max_db,cos_phi,mean_N";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.time,
            to_db(self.xi2_min),
            opt(self.xi2_s_db()),
            opt(self.alpha_min.map(f64::to_degrees)),
            to_db(self.xi2_max),
            self.cos_phi,
            self.mean_n
        )
    }
}

pub(crate) fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "nan".into())
}

/// Sample index of the smallest `ξ²_S`.
pub fn optimum(points: &[SqueezingPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(x) = p.xi2_s {
            if best.map_or(true, |b| x < points[b].xi2_s.unwrap()) {
                best = Some(i);
            }
        }
    }
    best
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return invalid("no evolution times");
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("evolution times must be non-negative and non-decreasing");
    }
    Ok(())
}

/// Final states of the protocol for each evolution time (closed system).
pub fn ideal_states(protocol: &Protocol, n: usize, times: &[f64], dt: Option<f64>) -> Result<Vec<SpinState>> {
    check_times(times)?;
    let init = protocol.initial_state(n)?;
    if !protocol.echo && protocol.pulses == PulseMode::Instant {
        return evolve_sampled(&init, &protocol.params, times, dt);
    }
    times.iter().map(|&t| run_sequence(&init, &protocol.sequence(t)?, dt)).collect()
}

/// Closed-system squeezing sweep.
pub fn ideal_sweep(protocol: &Protocol, n: usize, times: &[f64], dt: Option<f64>) -> Result<Vec<SqueezingPoint>> {
    let states = ideal_states(protocol, n, times, dt)?;
    times.iter().zip(&states).map(|(&t, s)| SqueezingPoint::from_moments(t, &s.moments())).collect()
}

/// Trajectory-ensemble options for sweeps.
#[derive(Clone, Debug)]
pub struct EnsembleOptions {
    pub channels: Vec<JumpChannel>,
    pub noise: NoiseModel,
    pub trajectories: usize,
    pub master_seed: u64,
    pub workers: Option<usize>,
    pub dt: Option<f64>,
    /// Apply the read-out model (ramp loss, detection noise subtracted) to
    /// the ensemble moments before analysis.
    pub readout: bool,
}

/// Seed of the ensemble for the `index`-th evolution time when each time
/// needs its own run.
pub fn derived_seed(master: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Open-system sweep. Without echo and with instantaneous pulses one
/// ensemble is sampled at all times; otherwise every time is a separate run.
pub fn ensemble_sweep(protocol: &Protocol, n: usize, times: &[f64], opts: &EnsembleOptions) -> Result<(Vec<SqueezingPoint>, Vec<TrajectoryEnsemble>)> {
    check_times(times)?;
    let init = protocol.initial_state(n)?;
    let spec = |sample_times: Vec<f64>, seed: u64| EnsembleSpec {
        settings: TrajectorySettings { channels: opts.channels.clone(), noise: opts.noise, dt: opts.dt, sample_times },
        trajectories: opts.trajectories,
        master_seed: seed,
        workers: opts.workers,
    };
    let mut ensembles = Vec::new();
    let mut moments: Vec<(f64, SpinMoments)> = Vec::new();
    if !protocol.echo && protocol.pulses == PulseMode::Instant {
        let seq = protocol.sequence(times[times.len() - 1])?;
        let e = run_ensemble(&init, &seq, &spec(times.to_vec(), opts.master_seed))?;
        for (i, &t) in times.iter().enumerate() {
            moments.push((t, e.moments(i)));
        }
        ensembles.push(e);
    } else {
        for (i, &t) in times.iter().enumerate() {
            let seq = protocol.sequence(t)?;
            let end = seq.total_duration();
            let e = run_ensemble(&init, &seq, &spec(vec![end], derived_seed(opts.master_seed, i)))?;
            moments.push((t, e.moments(0)));
            ensembles.push(e);
        }
    }
    let points = moments
        .iter()
        .map(|(t, m)| {
            let m = if opts.readout { readout_moments(m, &opts.noise)? } else { *m };
            SqueezingPoint::from_moments(*t, &m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((points, ensembles))
}

/// Read-out as analysed: ramp loss and detection noise are applied, then the
/// known detection noise is subtracted again.
pub fn readout_moments(m: &SpinMoments, noise: &NoiseModel) -> Result<SpinMoments> {
    let noisy = analysis::degrade_moments(m, noise.ramp_loss_atoms, noise.sigma_det)?;
    let mut out = noisy;
    let sub = 0.5 * noise.sigma_det * noise.sigma_det;
    for a in 0..3 {
        out.second[a][a] -= sub;
    }
    Ok(out)
}

/// Per-site atom numbers of a lattice: a Gaussian envelope from `n_min` at
/// the edges to `n_max` in the centre. `width` is the envelope width in
/// units of the half array length.
pub fn lattice_profile(sites: usize, n_min: usize, n_max: usize, width: f64) -> Result<Vec<usize>> {
    if sites == 0 || n_max < n_min || !(width > 0.0) {
        return invalid("lattice profile needs sites > 0, n_max ≥ n_min and width > 0");
    }
    if sites == 1 {
        return Ok(vec![n_max]);
    }
    let half = 0.5 * (sites - 1) as f64;
    let edge = (-1.0 / (2.0 * width * width)).exp();
    Ok((0..sites)
        .map(|i| {
            let x = (i as f64 - half) / half;
            let g = ((-x * x / (2.0 * width * width)).exp() - edge) / (1.0 - edge);
            (n_min as f64 + (n_max - n_min) as f64 * g).round() as usize
        })
        .collect())
}

/// The lattice used for array studies: 30 sites between 200 and 600 atoms,
/// about 10 200 atoms in total.
pub fn default_lattice() -> Vec<usize> {
    lattice_profile(30, 200, 600, 0.29).expect("valid default lattice")
}

/// Shot table for an array of sites. Each shot applies an optional common
/// `z` rotation (Gaussian, `common_mode_sigma` rad, identical for all sites)
/// followed by the tomography rotation `alpha` about `x`.
///
/// Read-out draws come from one stream per site and the common-mode angles
/// from a separate stream, so runs with and without common-mode noise share
/// their sampling randomness.
pub fn simulate_array(states: &[SpinState], alpha: f64, shots: usize, common_mode_sigma: f64, seed: u64) -> Result<ShotTable> {
    if states.is_empty() || shots == 0 {
        return invalid("array simulation needs sites and shots");
    }
    if !(common_mode_sigma >= 0.0) {
        return invalid("common-mode noise must be non-negative");
    }
    let angles: Vec<f64> = if common_mode_sigma > 0.0 {
        let mut r = trajectory_rng(seed, u64::MAX);
        let g = Normal::new(0.0, common_mode_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..shots).map(|_| g.sample(&mut r)).collect()
    } else {
        vec![0.0; shots]
    };
    let per_site: Vec<Vec<Counts>> = states
        .par_iter()
        .enumerate()
        .map(|(site, state)| {
            let mut r = trajectory_rng(seed, site as u64);
            let n = state.atom_count() as f64;
            let draw = |s: &SpinState, r: &mut rand_chacha::ChaCha8Rng| {
                let k = OccupationSampler::new(s).draw(r) as f64;
                (k, n - k)
            };
            if common_mode_sigma == 0.0 {
                let rotated = state.rotate(Axis::X, alpha);
                let sampler = OccupationSampler::new(&rotated);
                (0..shots)
                    .map(|_| {
                        let k = sampler.draw(&mut r) as f64;
                        (k, n - k)
                    })
                    .collect()
            } else {
                angles.iter().map(|&eps| draw(&state.rotate(Axis::Z, eps).rotate(Axis::X, alpha), &mut r)).collect()
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(states.len() * shots);
    for (site, counts) in per_site.iter().enumerate() {
        for (shot, &(u, d)) in counts.iter().enumerate() {
            rows.push(Shot { site, shot, n_up: u, n_down: d });
        }
    }
    ShotTable::new(rows)
}

/// One row of an array scaling study.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub sites: usize,
    pub n_tot: f64,
    pub xi2_n: f64,
    pub xi2_n_se: Option<f64>,
    /// Relative squeezing between the two halves of the prefix (≥ 2 sites).
    pub xi2_rel: Option<f64>,
    pub v: f64,
    pub xi2_s: Option<f64>,
}

impl ScalingRow {
    pub const CSV_HEADER: &'static str = "n_tot,xi2_n_db,xi2_rel_db,v,xi2_s_db";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.n_tot, to_db(self.xi2_n), opt(self.xi2_rel.map(to_db)), self.v, opt(self.xi2_s.map(to_db)))
    }
}

/// Scaling curve over prefixes of `ordering`: summed number squeezing,
/// differential squeezing between the prefix halves, visibility of the
/// summed spin and the Wineland parameter. With `correction = Some((σ_det,
/// order))` the known detection noise is removed from the number squeezing.
pub fn scaling_curve(table: &ShotTable, site_moments: &[SpinMoments], ordering: &[usize], correction: Option<(f64, NoiseSubtraction)>) -> Result<Vec<ScalingRow>> {
    if ordering.iter().any(|&i| i >= site_moments.len()) {
        return invalid("ordering refers to unknown sites");
    }
    let points = match correction {
        Some((sigma, order)) => analysis::array_scaling_corrected(table, ordering, sigma, order)?,
        None => analysis::array_scaling(table, ordering)?,
    };
    points
        .iter()
        .map(|p| {
            let prefix = &ordering[..p.sites];
            let xi2_rel = if p.sites >= 2 {
                let (l, r) = prefix.split_at(p.sites / 2);
                Some(analysis::differential_squeezing(&table.summed_counts(l)?, &table.summed_counts(r)?)?)
            } else {
                None
            };
            let ms: Vec<SpinMoments> = prefix.iter().map(|&i| site_moments[i]).collect();
            let vis = analysis::visibility(&ms)?;
            let xi2_s = if vis.v > 0.0 { Some(vis.wineland(p.xi2_n)?) } else { None };
            Ok(ScalingRow { sites: p.sites, n_tot: p.n_tot, xi2_n: p.xi2_n, xi2_n_se: p.xi2_n_se, xi2_rel, v: vis.v, xi2_s })
        })
        .collect()
}

/// States of every site after the protocol at time `t`; each site evolves
/// with its own `χ(N)`, `δ(N)` and preparation phase.
pub fn array_states(params: &PhysicalParams, echo: bool, pulses: PulseMode, profile: &[usize], t: f64, dt: Option<f64>) -> Result<Vec<SpinState>> {
    profile
        .par_iter()
        .map(|&n| {
            let proto = Protocol::new(*params, n, echo, pulses);
            Ok(ideal_states(&proto, n, &[t], dt)?.remove(0))
        })
        .collect()
}

/// Squeezing after a fixed time for a range of atom numbers.
pub fn n_dependence(params: &PhysicalParams, echo: bool, pulses: PulseMode, ns: &[usize], t: f64, dt: Option<f64>) -> Result<Vec<(usize, SqueezingPoint)>> {
    if ns.is_empty() || ns.contains(&0) {
        return invalid("atom numbers must be positive");
    }
    ns.par_iter()
        .map(|&n| {
            let proto = Protocol::new(*params, n, echo, pulses);
            let s = ideal_states(&proto, n, &[t], dt)?.remove(0);
            Ok((n, SqueezingPoint::from_moments(t, &s.moments())?))
        })
        .collect()
}

/// Gaussian per-site phase spread applied to equatorial coherent states.
pub fn dephased_coherent_sites<R: Rng + ?Sized>(profile: &[usize], phase: f64, sigma_phi: f64, rng: &mut R) -> Result<Vec<SpinState>> {
    let g = Normal::new(0.0, sigma_phi.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    profile.iter().map(|&n| SpinState::coherent(n, 0.5 * PI, phase + if sigma_phi > 0.0 { g.sample(rng) } else { 0.0 })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::ChiLaw;

    #[test]
    fn lattice_profile_shape() {
        let p = default_lattice();
        assert_eq!(p.len(), 30);
        assert_eq!(*p.iter().min().unwrap(), 200);
        assert!(*p.iter().max().unwrap() <= 600 && *p.iter().max().unwrap() >= 590);
        let total: usize = p.iter().sum();
        assert!((9_500..=11_000).contains(&total), "{total}");
        assert_eq!(p.first(), p.last());
    }

    #[test]
    fn flat_sweep_without_couplings() {
        let params = PhysicalParams::constant(0.0, 0.0, 0.0);
        let proto = Protocol { params, prep_phase: PI, echo: false, pulses: PulseMode::Instant };
        for p in ideal_sweep(&proto, 50, &[0.0, 0.01], None).unwrap() {
            assert!(to_db(p.xi2_min).abs() < 1e-9);
            assert!(p.xi2_s_db().unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn single_atom_is_not_squeezed() {
        let params = PhysicalParams { chi: ChiLaw::FixedProduct { n_chi: 2.0 * PI * 30.0 }, ..PhysicalParams::ideal_default() };
        let rows = n_dependence(&params, false, PulseMode::Instant, &[1], 0.015, None).unwrap();
        let p = rows[0].1;
        assert!(p.xi2_s.map_or(true, |x| x >= 1.0 - 1e-9));
    }

    #[test]
    fn zero_rate_ensemble_matches_ideal() {
        let params = PhysicalParams::ideal_default();
        let proto = Protocol::new(params, 60, false, PulseMode::Instant);
        let times = [0.0, 0.005, 0.01];
        let ideal = ideal_sweep(&proto, 60, &times, None).unwrap();
        let opts = EnsembleOptions {
            channels: vec![],
            noise: NoiseModel::none(),
            trajectories: 1,
            master_seed: 0,
            workers: Some(1),
            dt: None,
            readout: false,
        };
        let (ens, _) = ensemble_sweep(&proto, 60, &times, &opts).unwrap();
        for (a, b) in ideal.iter().zip(&ens) {
            assert!((to_db(a.xi2_min) - to_db(b.xi2_min)).abs() < 1e-8);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derived_seed(1, 0), derived_seed(1, 1));
        assert_ne!(derived_seed(1, 0), derived_seed(2, 0));
    }
}
