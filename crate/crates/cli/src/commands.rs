//! One function per subcommand. Each writes its data files, a plotting
//! script and a run manifest into the output directory.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tnt_core::analysis::{self, half_turn_grid, to_db, TomographyResult};
use tnt_core::mcwf::{trajectory_rng, TrajectoryEnsemble};
use tnt_core::meanfield::{self, Stability};
use tnt_core::pipeline::{self, EnsembleOptions, ScalingRow, SqueezingPoint};
use tnt_core::spin::{Axis, SpinMoments, SpinState};

use crate::config::{ArrayState, ConfigError, ExperimentConfig, Mode, SiteOrder};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical error: {0}")]
    Numerical(#[from] tnt_core::Error),
    #[error("output error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(tnt_core::Error::Io(_)) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Everything a command needs besides its own config section.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub threads: usize,
}

/// What a command produced.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub command: String,
    /// File names relative to the output directory, manifest last.
    pub outputs: Vec<String>,
    pub checks: Map<String, Value>,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
}

impl Report {
    fn new(command: &str) -> Self {
        Self { command: command.into(), ..Default::default() }
    }

    fn write(&mut self, dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
        fs::write(dir.join(name), content).map_err(|e| CliError::Io(format!("{}: {e}", dir.join(name).display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn check(&mut self, key: &str, v: Value) {
        self.checks.insert(key.into(), v);
    }
}

/// JSON number, or `null` for non-finite values.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn opt_num(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

fn nan_or(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "nan".into())
}

/// Three decimals for terminal output.
fn short(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "nan".into())
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.to_ini().as_bytes()))
}

fn finish(ctx: &RunContext, mut report: Report) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let manifest = json!({
        "command": report.command,
        "mode": cfg.mode.to_string(),
        "master_seed": cfg.master_seed,
        "config_sha256": config_hash(cfg),
        "threads": ctx.threads,
        "versions": { "tnt-cli": env!("CARGO_PKG_VERSION"), "tnt-core": tnt_core::VERSION },
        "outputs": report.outputs,
        "checks": Value::Object(report.checks.clone()),
        "config": cfg.to_ini(),
    });
    let name = format!("{}.manifest.json", report.command);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    report.write(&ctx.out_dir, &name, &(text + "\n"))?;
    Ok(report)
}

fn ensemble_options(ctx: &RunContext, seed: u64) -> EnsembleOptions {
    let cfg = &ctx.config;
    EnsembleOptions {
        channels: cfg.channels.clone(),
        noise: cfg.noise(),
        trajectories: cfg.trajectories,
        master_seed: seed,
        workers: Some(ctx.threads),
        dt: cfg.dt(),
        readout: cfg.mode == Mode::Experiment,
    }
}

/// Moments after the protocol at time `t` for `n` atoms, including the
/// read-out model in experiment mode.
fn moments_at(ctx: &RunContext, n: usize, t: f64, seed: u64) -> Result<SpinMoments, CliError> {
    let cfg = &ctx.config;
    let proto = cfg.protocol(n);
    Ok(match cfg.mode {
        Mode::Ideal => pipeline::ideal_states(&proto, n, &[t], cfg.dt())?.remove(0).moments(),
        _ => {
            let opts = ensemble_options(ctx, seed);
            let (_, ens) = pipeline::ensemble_sweep(&proto, n, &[t], &opts)?;
            let m = ens[0].moments(0);
            if opts.readout {
                pipeline::readout_moments(&m, &opts.noise)?
            } else {
                m
            }
        }
    })
}

fn squeezing_csv(points: &[SqueezingPoint]) -> String {
    let mut s = String::from(SqueezingPoint::CSV_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&p.csv_row());
        s.push('\n');
    }
    s
}

pub fn squeeze_sweep(ctx: &RunContext) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let n = cfg.n0;
    let proto = cfg.protocol(n);
    let times = cfg.times_s();
    let points = match cfg.mode {
        Mode::Ideal => pipeline::ideal_sweep(&proto, n, &times, cfg.dt())?,
        _ => pipeline::ensemble_sweep(&proto, n, &times, &ensemble_options(ctx, cfg.master_seed))?.0,
    };
    let mut r = Report::new("squeeze_sweep");
    r.write(&ctx.out_dir, "squeeze_sweep.csv", &squeezing_csv(&points))?;
    r.write(&ctx.out_dir, "squeeze_sweep.gp", SQUEEZE_GP)?;
    if let Some(i) = pipeline::optimum(&points) {
        let p = &points[i];
        r.check("optimum_t_ms", num(p.time * 1e3));
        r.check("optimum_xi2_s_db", opt_num(p.xi2_s_db()));
        r.check("optimum_alpha_min_deg", opt_num(p.alpha_min.map(f64::to_degrees)));
        r.summary.push(format!("best xi2_S = {} dB at {:.2} ms", short(p.xi2_s_db()), p.time * 1e3));
    } else {
        r.summary.push("no defined spin squeezing in the sweep".into());
    }
    r.summary.push(format!("{} times, N0 = {n}, mode {}", points.len(), cfg.mode));
    finish(ctx, r)
}

pub fn tomography(ctx: &RunContext, time_ms: Option<f64>) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let n = cfg.n0;
    let t = time_ms.unwrap_or(cfg.tomography_time_ms) * 1e-3;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ConfigError::Value { line: None, key: "--time-ms".into(), msg: "must be non-negative".into() }.into());
    }
    let grid = half_turn_grid(0.0, cfg.tomography_angles);
    let mut r = Report::new("tomography");
    let result: TomographyResult = if cfg.tomography_shots > 0 {
        let state = pipeline::ideal_states(&cfg.protocol(n), n, &[t], cfg.dt())?.remove(0);
        let per: Vec<_> = grid
            .iter()
            .enumerate()
            .map(|(i, &a)| analysis::sample_counts(&state.rotate(Axis::X, a), cfg.tomography_shots, &mut trajectory_rng(cfg.master_seed, i as u64)))
            .collect();
        let shots = analysis::tomography_from_shots(&grid, &per)?;
        let exact = analysis::tomography_from_moments(&state.moments(), &grid)?;
        r.check("alpha_min_moments_deg", opt_num(exact.alpha_min.map(f64::to_degrees)));
        r.check("xi2_min_moments_db", num(to_db(exact.xi2_min)));
        shots
    } else {
        let m = moments_at(ctx, n, t, cfg.master_seed)?;
        let res = analysis::tomography_from_moments(&m, &grid)?;
        // the grid misses the extremes by at most half a step
        let tol = 1.0 - (PI / cfg.tomography_angles as f64).cos() + 1e-9;
        let ok = res.scan_matches_analytic(tol);
        r.check("scan_matches_analytic", ok.map(Value::Bool).unwrap_or(Value::Null));
        res
    };
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    r.write(&ctx.out_dir, "tomography.csv", &String::from_utf8_lossy(&csv))?;
    r.write(&ctx.out_dir, "tomography.gp", TOMOGRAPHY_GP)?;
    r.check("time_ms", num(t * 1e3));
    r.check("alpha_min_deg", opt_num(result.alpha_min.map(f64::to_degrees)));
    r.check("xi2_min_db", num(to_db(result.xi2_min)));
    r.check("xi2_max_db", num(to_db(result.xi2_max)));
    r.summary.push(format!(
        "t = {:.2} ms: xi2_min = {:.3} dB at alpha = {} deg, xi2_max = {:.3} dB",
        t * 1e3,
        to_db(result.xi2_min),
        short(result.alpha_min.map(f64::to_degrees)),
        to_db(result.xi2_max)
    ));
    if let Some(Value::Bool(ok)) = r.checks.get("scan_matches_analytic") {
        r.summary.push(format!("scan extrema match analytic extrema: {ok}"));
    }
    finish(ctx, r)
}

pub fn classical(ctx: &RunContext) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let n = cfg.n0;
    let params = cfg.physical_params();
    let mut r = Report::new("classical");
    let mut fp = String::from("z,phi,stability,re1,im1,re2,im2\n");
    let mut count = 0;
    if params.omega == 0.0 {
        // pure twisting: only the poles are stationary structures
        for z in [1.0, -1.0] {
            let _ = writeln!(fp, "{z},0,pole,nan,nan,nan,nan");
            r.summary.push(format!("pole at z = {z}"));
            count += 1;
        }
    } else {
        for p in meanfield::find_fixed_points(&params, n)? {
            let kind = match p.stability {
                Stability::Center => "center",
                Stability::Saddle => "saddle",
            };
            let [e1, e2] = p.eigenvalues;
            let _ = writeln!(fp, "{},{},{kind},{},{},{},{}", p.point.z, p.point.phi, e1.re, e1.im, e2.re, e2.im);
            r.summary.push(format!("{kind} at z = {:.6}, phi = {:.6}; eigenvalues {:.4}{:+.4}i, {:.4}{:+.4}i", p.point.z, p.point.phi, e1.re, e1.im, e2.re, e2.im));
            count += 1;
        }
    }
    let samples = meanfield::portrait(&params, n, cfg.grid_z, cfg.grid_phi)?;
    let mut csv = String::from("z,phi,dz_dt,dphi_dt,energy,region\n");
    for s in &samples {
        let _ = writeln!(csv, "{},{},{},{},{},{}", s.z, s.phi, s.dzdt, s.dphidt, s.energy, s.region.map(|g| g.as_str()).unwrap_or("none"));
    }
    r.write(&ctx.out_dir, "fixed_points.csv", &fp)?;
    r.write(&ctx.out_dir, "portrait.csv", &csv)?;
    r.write(&ctx.out_dir, "classical.gp", CLASSICAL_GP)?;
    let lambda = params.lambda(n);
    r.check("lambda", num(lambda));
    r.check("fixed_points", json!(count));
    r.summary.insert(0, format!("Lambda = {lambda:.4} at N = {n}: {count} stationary structures"));
    finish(ctx, r)
}

fn site_order(sites: usize, order: SiteOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sites).collect();
    if order == SiteOrder::CenterOut {
        let c = 0.5 * (sites as f64 - 1.0);
        idx.sort_by(|a, b| (*a as f64 - c).abs().total_cmp(&(*b as f64 - c).abs()).then(a.cmp(b)));
    }
    idx
}

pub fn scaling(ctx: &RunContext) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let params = cfg.physical_params();
    let profile = pipeline::lattice_profile(cfg.sites, cfg.site_n_min, cfg.site_n_max, cfg.site_width)?;
    let t = cfg.array_time_ms * 1e-3;
    let states: Vec<SpinState> = match cfg.array_state {
        ArrayState::Squeezed => pipeline::array_states(&params, cfg.echo, cfg.pulse_mode(), &profile, t, cfg.dt())?,
        ArrayState::Coherent => profile.iter().map(|&n| SpinState::coherent(n, FRAC_PI_2, cfg.protocol(n).prep_phase)).collect::<tnt_core::Result<_>>()?,
    };
    let alpha = cfg.alpha_deg.to_radians();
    let mut table = pipeline::simulate_array(&states, alpha, cfg.array_shots, cfg.common_mode_rad, cfg.master_seed)?;
    let noise = cfg.noise();
    let readout = cfg.mode == Mode::Experiment && (noise.sigma_det > 0.0 || noise.ramp_loss_atoms > 0.0);
    if readout {
        table = analysis::apply_detection_noise(&table, &noise, &mut trajectory_rng(cfg.master_seed, u64::MAX - 1))?;
    }
    let correction = (readout && noise.sigma_det > 0.0).then_some((noise.sigma_det, cfg.noise_subtraction.0));
    let moments: Vec<SpinMoments> = states.iter().map(|s| s.moments()).collect();
    let ordering = site_order(cfg.sites, cfg.site_order);
    let rows = if cfg.sites == 1 {
        let counts = table.site_counts(0);
        let xi2_n = match correction {
            Some((sigma, _)) => analysis::number_squeezing_corrected(&counts, sigma)?.value,
            None => analysis::number_squeezing(&counts)?,
        };
        let vis = analysis::visibility(&moments)?;
        let xi2_s = if vis.v > 0.0 { Some(vis.wineland(xi2_n)?) } else { None };
        let n_tot = counts.iter().map(|c| c.0 + c.1).sum::<f64>() / counts.len() as f64;
        vec![ScalingRow { sites: 1, n_tot, xi2_n, xi2_n_se: None, xi2_rel: None, v: vis.v, xi2_s }]
    } else {
        pipeline::scaling_curve(&table, &moments, &ordering, correction)?
    };
    let mut csv = String::from(ScalingRow::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    let mut shots = Vec::new();
    table.write_csv(&mut shots)?;
    let mut r = Report::new("scaling");
    r.write(&ctx.out_dir, "scaling.csv", &csv)?;
    r.write(&ctx.out_dir, "array_shots.csv", &String::from_utf8_lossy(&shots))?;
    r.write(&ctx.out_dir, "scaling.gp", SCALING_GP)?;
    let last = rows.last().expect("at least one row");
    r.check("sites", json!(cfg.sites));
    r.check("n_tot", num(last.n_tot));
    r.check("xi2_n_db", num(to_db(last.xi2_n)));
    r.check("xi2_rel_db", opt_num(last.xi2_rel.map(to_db)));
    r.check("visibility", num(last.v));
    r.summary.push(format!(
        "{} sites, N_tot = {:.0}: xi2_N = {:.3} dB, xi2_Rel = {} dB, V = {:.4}",
        cfg.sites,
        last.n_tot,
        to_db(last.xi2_n),
        short(last.xi2_rel.map(to_db)),
        last.v
    ));
    finish(ctx, r)
}

pub fn ndep(ctx: &RunContext) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let t = cfg.ndep_time_ms * 1e-3;
    let points: Vec<(usize, SqueezingPoint)> = match cfg.mode {
        Mode::Ideal => pipeline::n_dependence(&cfg.physical_params(), cfg.echo, cfg.pulse_mode(), &cfg.ndep_n, t, cfg.dt())?,
        _ => cfg
            .ndep_n
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let opts = ensemble_options(ctx, pipeline::derived_seed(cfg.master_seed, i));
                Ok((n, pipeline::ensemble_sweep(&cfg.protocol(n), n, &[t], &opts)?.0.remove(0)))
            })
            .collect::<Result<_, CliError>>()?,
    };
    let mut csv = String::from("N,xi2_s_db,alpha_min_deg,xi2_max_db\n");
    let mut degenerate = Vec::new();
    for (n, p) in &points {
        let _ = writeln!(csv, "{n},{},{},{}", nan_or(p.xi2_s_db()), nan_or(p.alpha_min.map(f64::to_degrees)), to_db(p.xi2_max));
        // a single atom cannot be entangled; undefined values are flagged too
        if *n < 2 || p.xi2_s.is_none() || p.alpha_min.is_none() {
            degenerate.push(*n);
        }
    }
    let mut r = Report::new("ndep");
    r.write(&ctx.out_dir, "ndep.csv", &csv)?;
    r.write(&ctx.out_dir, "ndep.gp", NDEP_GP)?;
    r.check("time_ms", num(t * 1e3));
    r.check("degenerate_n", json!(degenerate));
    for (n, p) in &points {
        r.summary.push(format!("N = {n}: xi2_S = {} dB, alpha_min = {} deg", short(p.xi2_s_db()), short(p.alpha_min.map(f64::to_degrees))));
    }
    if !degenerate.is_empty() {
        r.summary.push(format!("degenerate squeezing (no entanglement possible or undefined) for N = {degenerate:?}"));
    }
    finish(ctx, r)
}

pub fn ensemble(ctx: &RunContext) -> Result<Report, CliError> {
    let cfg = &ctx.config;
    let n = cfg.n0;
    let times = cfg.times_s();
    let (points, ensembles) = pipeline::ensemble_sweep(&cfg.protocol(n), n, &times, &ensemble_options(ctx, cfg.master_seed))?;
    let merged = merge(&times, cfg.master_seed, ensembles);
    let mut r = Report::new("ensemble");
    r.write(&ctx.out_dir, "ensemble.csv", &merged.to_csv_string())?;
    r.write(&ctx.out_dir, "ensemble_squeezing.csv", &squeezing_csv(&points))?;
    r.write(&ctx.out_dir, "ensemble.gp", ENSEMBLE_GP)?;
    r.check("trajectories", json!(merged.trajectory_count));
    r.check("total_jumps", json!(merged.total_jumps));
    r.check("atoms_lost", json!(merged.atoms_lost));
    r.check("final_mean_n", num(*merged.mean_n.last().expect("non-empty")));
    r.summary.push(format!(
        "{} trajectories, {} jumps, mean N at {:.2} ms = {:.2}",
        merged.trajectory_count,
        merged.total_jumps,
        times[times.len() - 1] * 1e3,
        merged.mean_n.last().unwrap()
    ));
    finish(ctx, r)
}

/// Joins per-time ensembles into one table keyed by evolution time.
fn merge(times: &[f64], seed: u64, ensembles: Vec<TrajectoryEnsemble>) -> TrajectoryEnsemble {
    if ensembles.len() == 1 {
        return ensembles.into_iter().next().unwrap();
    }
    let mut out = TrajectoryEnsemble {
        times: times.to_vec(),
        mean_j: Vec::new(),
        second: Vec::new(),
        mean_n: Vec::new(),
        var_n: Vec::new(),
        trajectory_count: ensembles[0].trajectory_count,
        master_seed: seed,
        total_jumps: 0,
        atoms_lost: 0,
    };
    for e in ensembles {
        out.mean_j.extend(e.mean_j);
        out.second.extend(e.second);
        out.mean_n.extend(e.mean_n);
        out.var_n.extend(e.var_n);
        out.total_jumps += e.total_jumps;
        out.atoms_lost += e.atoms_lost;
    }
    out
}

const SQUEEZE_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 't (ms)'
set ylabel 'dB'
set y2label 'alpha_min (deg)'
set y2tics
plot 'squeeze_sweep.csv' using ($1*1e3):3 with linespoints title 'xi2_S', \
     '' using ($1*1e3):2 with lines title 'xi2_min', \
     '' using ($1*1e3):4 axes x1y2 with points title 'alpha_min'
"#;

const TOMOGRAPHY_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 'alpha (deg)'
set ylabel 'xi2_N (dB)'
plot 'tomography.csv' using ($1*180/pi):3 with lines title 'xi2_N'
"#;

const CLASSICAL_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 'phi (rad)'
set ylabel 'z'
set xrange [0:2*pi]
set yrange [-1:1]
plot 'portrait.csv' using 2:1:($4*1e-4):($3*1e-4) with vectors head size 0.01,20 title 'flow', \
     'fixed_points.csv' using 2:1 with points pt 7 ps 1.5 title 'fixed points'
"#;

const SCALING_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 'N_tot'
set ylabel 'dB'
plot 'scaling.csv' using 1:2 with linespoints title 'xi2_N', \
     '' using 1:3 with linespoints title 'xi2_Rel', \
     '' using 1:5 with linespoints title 'xi2_S'
"#;

const NDEP_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 'N'
set ylabel 'dB'
set y2label 'alpha_min (deg)'
set y2tics
plot 'ndep.csv' using 1:2 with linespoints title 'xi2_S', \
     '' using 1:4 with linespoints title 'xi2_max', \
     '' using 1:3 axes x1y2 with linespoints title 'alpha_min'
"#;

const ENSEMBLE_GP: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 't (ms)'
set ylabel 'mean N'
plot 'ensemble.csv' using ($1*1e3):11 with linespoints title 'mean N'
"#;
