//! INI-style run configuration.
//!
//! Frequencies are entered in Hz (keys ending in `_hz`) and converted to
//! angular frequencies. Keys left out take the defaults of the selected mode,
//! so `mode` is resolved before anything else.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use tnt_core::analysis::NoiseSubtraction;
use tnt_core::hamiltonian::{ChiLaw, PhysicalParams};
use tnt_core::mcwf::{JumpChannel, NoiseModel};
use tnt_core::sequence::{PulseMode, Protocol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("{}{key}: {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Value { line: Option<usize>, key: String, msg: String },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Closed-system evolution.
    Ideal,
    /// Quantum trajectories with loss; noise only as configured.
    Mcwf,
    /// Trajectories plus the read-out model.
    Experiment,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Scheme {
    Tnt,
    Oat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ChiKind {
    /// `χ = 2π·coeff/√N`.
    InverseSqrt,
    /// `Nχ = 2π·coeff`.
    FixedProduct,
    /// `χ = 2π·coeff`.
    Constant,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Pulses {
    Instant,
    Finite,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ArrayState {
    Squeezed,
    Coherent,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SiteOrder {
    /// Site index order.
    Index,
    /// Outward from the central site, alternating sides.
    CenterOut,
}

macro_rules! keyword_enum {
    ($t:ty { $($v:ident => $s:literal),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok(<$t>::$v),)+
                    _ => Err(format!("expected one of {}", [$($s),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s,)+ })
            }
        }
    };
}

keyword_enum!(Mode { Ideal => "ideal", Mcwf => "mcwf", Experiment => "experiment" });
keyword_enum!(Scheme { Tnt => "tnt", Oat => "oat" });
keyword_enum!(ChiKind { InverseSqrt => "inverse_sqrt", FixedProduct => "fixed_product", Constant => "constant" });
keyword_enum!(Pulses { Instant => "instant", Finite => "finite" });
keyword_enum!(ArrayState { Squeezed => "squeezed", Coherent => "coherent" });
keyword_enum!(SiteOrder { Index => "index", CenterOut => "center_out" });

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Subtraction(pub NoiseSubtraction);

impl FromStr for Subtraction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "summed" => Ok(Self(NoiseSubtraction::Summed)),
            "per_site" => Ok(Self(NoiseSubtraction::PerSite)),
            _ => Err("expected one of summed, per_site".into()),
        }
    }
}

impl fmt::Display for Subtraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            NoiseSubtraction::Summed => "summed",
            NoiseSubtraction::PerSite => "per_site",
        })
    }
}

/// Fully resolved configuration. Frequencies are stored in Hz as written.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,

    pub chi_law: ChiKind,
    pub chi_coeff_hz: f64,
    pub omega_hz: f64,
    pub delta_hz: f64,
    pub delta_coeff_hz: f64,
    pub n_ref: f64,

    pub n0: usize,
    pub times_ms: Vec<f64>,
    pub scheme: Scheme,
    pub echo: bool,
    pub pulses: Pulses,
    pub prep_pulse_hz: f64,
    pub echo_pulse_hz: f64,
    /// `None` selects the default step.
    pub dt_us: Option<f64>,

    pub tomography_time_ms: f64,
    pub tomography_angles: usize,
    /// 0 analyses moments; otherwise shots per angle.
    pub tomography_shots: usize,

    pub channels: Vec<JumpChannel>,

    pub sigma_delta_hz: f64,
    pub sigma_det: f64,
    pub ramp_loss_atoms: f64,

    pub trajectories: usize,

    pub sites: usize,
    pub site_n_min: usize,
    pub site_n_max: usize,
    pub site_width: f64,
    pub array_shots: usize,
    pub common_mode_rad: f64,
    pub alpha_deg: f64,
    pub array_state: ArrayState,
    pub array_time_ms: f64,
    pub site_order: SiteOrder,
    pub noise_subtraction: Subtraction,

    pub grid_z: usize,
    pub grid_phi: usize,

    pub ndep_n: Vec<usize>,
    pub ndep_time_ms: f64,
}

impl ExperimentConfig {
    pub fn defaults(mode: Mode) -> Self {
        let ideal = mode == Mode::Ideal;
        let (chi_law, chi_coeff_hz, delta_coeff_hz) = if ideal { (ChiKind::FixedProduct, 30.0, 0.0) } else { (ChiKind::InverseSqrt, 1.43, 0.63) };
        let noisy = mode == Mode::Experiment;
        Self {
            mode,
            master_seed: 2016,
            output_dir: None,
            chi_law,
            chi_coeff_hz,
            omega_hz: 19.0,
            delta_hz: 0.0,
            delta_coeff_hz,
            n_ref: 550.0,
            n0: 500,
            times_ms: if ideal { (1..=60).map(|i| 0.5 * i as f64).collect() } else { (1..=15).map(|i| 2.0 * i as f64).collect() },
            scheme: Scheme::Tnt,
            echo: !ideal,
            pulses: if noisy { Pulses::Finite } else { Pulses::Instant },
            prep_pulse_hz: 340.0,
            echo_pulse_hz: 340.0,
            dt_us: None,
            tomography_time_ms: 15.0,
            tomography_angles: 180,
            tomography_shots: 0,
            channels: if ideal { Vec::new() } else { JumpChannel::defaults() },
            sigma_delta_hz: if noisy { 0.45 } else { 0.0 },
            sigma_det: if noisy { 4.0 } else { 0.0 },
            ramp_loss_atoms: if noisy { 8.0 } else { 0.0 },
            trajectories: 500,
            sites: 30,
            site_n_min: 200,
            site_n_max: 600,
            site_width: 0.29,
            array_shots: 1000,
            common_mode_rad: 0.0,
            alpha_deg: 52.0,
            array_state: ArrayState::Squeezed,
            array_time_ms: 15.0,
            site_order: SiteOrder::CenterOut,
            noise_subtraction: Subtraction(NoiseSubtraction::Summed),
            grid_z: 41,
            grid_phi: 72,
            ndep_n: (0..=8).map(|i| 200 + 50 * i).collect(),
            ndep_time_ms: 15.0,
        }
    }

    /// Parses `text`; `mode_override` replaces the file's `mode` before the
    /// defaults are chosen.
    pub fn parse(text: &str, mode_override: Option<Mode>) -> Result<Self, ConfigError> {
        let entries = tokenize(text)?;
        let lines: HashMap<&str, usize> = entries.iter().map(|e| (e.key, e.line)).collect();
        let file_mode = match entries.iter().find(|e| e.key == "run.mode") {
            Some(e) => Some(parse_value::<Mode>(e)?),
            None => None,
        };
        let mut cfg = Self::defaults(mode_override.or(file_mode).unwrap_or(Mode::Ideal));
        for e in &entries {
            if e.key != "run.mode" {
                cfg.set(e)?;
            }
        }
        cfg.validate().map_err(|(key, msg)| ConfigError::Value { line: lines.get(key).copied(), key: key.to_string(), msg })?;
        Ok(cfg)
    }

    pub fn load(path: &Path, mode_override: Option<Mode>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::parse(&text, mode_override)
    }

    fn set(&mut self, e: &Entry) -> Result<(), ConfigError> {
        match e.key {
            "run.master_seed" => self.master_seed = parse_value(e)?,
            "run.output_dir" => self.output_dir = if e.value.is_empty() { None } else { Some(PathBuf::from(e.value)) },
            "physics.chi_law" => self.chi_law = parse_value(e)?,
            "physics.chi_coeff_hz" => self.chi_coeff_hz = parse_value(e)?,
            "physics.omega_hz" => self.omega_hz = parse_value(e)?,
            "physics.delta_hz" => self.delta_hz = parse_value(e)?,
            "physics.delta_coeff_hz" => self.delta_coeff_hz = parse_value(e)?,
            "physics.n_ref" => self.n_ref = parse_value(e)?,
            "protocol.n0" => self.n0 = parse_value(e)?,
            "protocol.times_ms" => self.times_ms = parse_floats(e)?,
            "protocol.scheme" => self.scheme = parse_value(e)?,
            "protocol.echo" => self.echo = parse_value(e)?,
            "protocol.pulses" => self.pulses = parse_value(e)?,
            "protocol.prep_pulse_hz" => self.prep_pulse_hz = parse_value(e)?,
            "protocol.echo_pulse_hz" => self.echo_pulse_hz = parse_value(e)?,
            "protocol.dt_us" => self.dt_us = if e.value.is_empty() || e.value == "auto" { None } else { Some(parse_value(e)?) },
            "tomography.time_ms" => self.tomography_time_ms = parse_value(e)?,
            "tomography.angles" => self.tomography_angles = parse_value(e)?,
            "tomography.shots" => self.tomography_shots = parse_value(e)?,
            "loss.channels" => self.channels = parse_channels(e)?,
            "noise.sigma_delta_hz" => self.sigma_delta_hz = parse_value(e)?,
            "noise.sigma_det" => self.sigma_det = parse_value(e)?,
            "noise.ramp_loss_atoms" => self.ramp_loss_atoms = parse_value(e)?,
            "ensemble.trajectories" => self.trajectories = parse_value(e)?,
            "array.sites" => self.sites = parse_value(e)?,
            "array.n_min" => self.site_n_min = parse_value(e)?,
            "array.n_max" => self.site_n_max = parse_value(e)?,
            "array.width" => self.site_width = parse_value(e)?,
            "array.shots" => self.array_shots = parse_value(e)?,
            "array.common_mode_rad" => self.common_mode_rad = parse_value(e)?,
            "array.alpha_deg" => self.alpha_deg = parse_value(e)?,
            "array.state" => self.array_state = parse_value(e)?,
            "array.time_ms" => self.array_time_ms = parse_value(e)?,
            "array.order" => self.site_order = parse_value(e)?,
            "array.noise_subtraction" => self.noise_subtraction = parse_value(e)?,
            "classical.grid_z" => self.grid_z = parse_value(e)?,
            "classical.grid_phi" => self.grid_phi = parse_value(e)?,
            "ndep.n_values" => self.ndep_n = parse_list(e)?,
            "ndep.time_ms" => self.ndep_time_ms = parse_value(e)?,
            _ => return Err(ConfigError::UnknownKey { line: e.line, key: e.key.to_string() }),
        }
        Ok(())
    }

    /// Returns the offending key and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        fn check(ok: bool, key: &'static str, msg: &str) -> Result<(), (&'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((key, msg.to_string()))
            }
        }
        let finite = |x: f64| x.is_finite();
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if self.mode == Mode::Ideal {
            check(self.channels.is_empty(), "loss.channels", "mode = ideal forbids loss channels")?;
            check(self.sigma_delta_hz == 0.0, "noise.sigma_delta_hz", "mode = ideal forbids noise")?;
            check(self.sigma_det == 0.0, "noise.sigma_det", "mode = ideal forbids noise")?;
            check(self.ramp_loss_atoms == 0.0, "noise.ramp_loss_atoms", "mode = ideal forbids noise")?;
        }
        check(nonneg(self.chi_coeff_hz) || (finite(self.chi_coeff_hz) && self.chi_law == ChiKind::Constant), "physics.chi_coeff_hz", "must be finite and non-negative")?;
        check(finite(self.omega_hz), "physics.omega_hz", "must be finite")?;
        check(finite(self.delta_hz), "physics.delta_hz", "must be finite")?;
        check(finite(self.delta_coeff_hz), "physics.delta_coeff_hz", "must be finite")?;
        check(nonneg(self.n_ref), "physics.n_ref", "must be non-negative")?;
        check(self.n0 >= 1, "protocol.n0", "must be at least 1")?;
        check(!self.times_ms.is_empty(), "protocol.times_ms", "needs at least one time")?;
        check(self.times_ms.iter().all(|t| nonneg(*t)), "protocol.times_ms", "times must be non-negative")?;
        check(self.times_ms.windows(2).all(|w| w[1] > w[0]), "protocol.times_ms", "times must be strictly increasing")?;
        if self.pulses == Pulses::Finite {
            check(self.prep_pulse_hz > 0.0 && finite(self.prep_pulse_hz), "protocol.prep_pulse_hz", "must be positive")?;
            check(self.echo_pulse_hz > 0.0 && finite(self.echo_pulse_hz), "protocol.echo_pulse_hz", "must be positive")?;
        }
        if let Some(dt) = self.dt_us {
            check(dt > 0.0 && finite(dt), "protocol.dt_us", "must be positive")?;
        }
        check(nonneg(self.tomography_time_ms), "tomography.time_ms", "must be non-negative")?;
        check(self.tomography_angles >= 2, "tomography.angles", "needs at least 2 angles")?;
        check(self.tomography_shots != 1, "tomography.shots", "use 0 (moments) or at least 2 shots")?;
        check(self.tomography_shots == 0 || self.mode == Mode::Ideal, "tomography.shots", "shot sampling needs mode = ideal")?;
        check(self.channels.len() <= 8, "loss.channels", "at most 8 channels")?;
        check(nonneg(self.sigma_delta_hz), "noise.sigma_delta_hz", "must be non-negative")?;
        check(nonneg(self.sigma_det), "noise.sigma_det", "must be non-negative")?;
        check(nonneg(self.ramp_loss_atoms), "noise.ramp_loss_atoms", "must be non-negative")?;
        check(self.trajectories >= 1, "ensemble.trajectories", "must be at least 1")?;
        check(self.sites >= 1, "array.sites", "must be at least 1")?;
        check(self.site_n_min >= 1, "array.n_min", "must be at least 1")?;
        check(self.site_n_max >= self.site_n_min, "array.n_max", "must be at least n_min")?;
        check(self.site_width > 0.0 && finite(self.site_width), "array.width", "must be positive")?;
        check(self.array_shots >= 2, "array.shots", "needs at least 2 shots")?;
        check(nonneg(self.common_mode_rad), "array.common_mode_rad", "must be non-negative")?;
        check(finite(self.alpha_deg), "array.alpha_deg", "must be finite")?;
        check(nonneg(self.array_time_ms), "array.time_ms", "must be non-negative")?;
        check(self.grid_z >= 2, "classical.grid_z", "needs at least 2 rows")?;
        check(self.grid_phi >= 1, "classical.grid_phi", "needs at least 1 column")?;
        check(!self.ndep_n.is_empty() && self.ndep_n.iter().all(|&n| n >= 1), "ndep.n_values", "needs positive atom numbers")?;
        check(nonneg(self.ndep_time_ms), "ndep.time_ms", "must be non-negative")?;
        Ok(())
    }

    /// Physical parameters in angular units, with the coupling removed for
    /// one-axis twisting.
    pub fn physical_params(&self) -> PhysicalParams {
        let coeff = TAU * self.chi_coeff_hz;
        let chi = match self.chi_law {
            ChiKind::InverseSqrt => ChiLaw::InverseSqrt { coeff },
            ChiKind::FixedProduct => ChiLaw::FixedProduct { n_chi: coeff },
            ChiKind::Constant => ChiLaw::Constant { chi: coeff },
        };
        let p = PhysicalParams { chi, omega: TAU * self.omega_hz, delta_ext: TAU * self.delta_hz, delta_coeff: TAU * self.delta_coeff_hz, n_ref: self.n_ref };
        match self.scheme {
            Scheme::Tnt => p,
            Scheme::Oat => p.one_axis_twisting(),
        }
    }

    pub fn pulse_mode(&self) -> PulseMode {
        match self.pulses {
            Pulses::Instant => PulseMode::Instant,
            Pulses::Finite => PulseMode::Finite { prep_rabi: TAU * self.prep_pulse_hz, echo_rabi: TAU * self.echo_pulse_hz },
        }
    }

    pub fn protocol(&self, n: usize) -> Protocol {
        Protocol::new(self.physical_params(), n, self.echo, self.pulse_mode())
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel { sigma_delta: TAU * self.sigma_delta_hz, sigma_det: self.sigma_det, ramp_loss_atoms: self.ramp_loss_atoms }
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt_us.map(|d| d * 1e-6)
    }

    pub fn times_s(&self) -> Vec<f64> {
        self.times_ms.iter().map(|t| t * 1e-3).collect()
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[run]\nmode = {}\nmaster_seed = {}", self.mode, self.master_seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        let _ = writeln!(
            s,
            "\n[physics]\nchi_law = {}\nchi_coeff_hz = {}\nomega_hz = {}\ndelta_hz = {}\ndelta_coeff_hz = {}\nn_ref = {}",
            self.chi_law, self.chi_coeff_hz, self.omega_hz, self.delta_hz, self.delta_coeff_hz, self.n_ref
        );
        let _ = writeln!(
            s,
            "\n[protocol]\nn0 = {}\ntimes_ms = {}\nscheme = {}\necho = {}\npulses = {}\nprep_pulse_hz = {}\necho_pulse_hz = {}\ndt_us = {}",
            self.n0,
            list(&self.times_ms),
            self.scheme,
            self.echo,
            self.pulses,
            self.prep_pulse_hz,
            self.echo_pulse_hz,
            self.dt_us.map(|d| d.to_string()).unwrap_or_else(|| "auto".into())
        );
        let _ = writeln!(s, "\n[tomography]\ntime_ms = {}\nangles = {}\nshots = {}", self.tomography_time_ms, self.tomography_angles, self.tomography_shots);
        let ch = self.channels.iter().map(|c| format!("{}:{}:{}", c.p, c.q, c.rate)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "\n[loss]\nchannels = {ch}");
        let _ = writeln!(s, "\n[noise]\nsigma_delta_hz = {}\nsigma_det = {}\nramp_loss_atoms = {}", self.sigma_delta_hz, self.sigma_det, self.ramp_loss_atoms);
        let _ = writeln!(s, "\n[ensemble]\ntrajectories = {}", self.trajectories);
        let _ = writeln!(
            s,
            "\n[array]\nsites = {}\nn_min = {}\nn_max = {}\nwidth = {}\nshots = {}\ncommon_mode_rad = {}\nalpha_deg = {}\nstate = {}\ntime_ms = {}\norder = {}\nnoise_subtraction = {}",
            self.sites,
            self.site_n_min,
            self.site_n_max,
            self.site_width,
            self.array_shots,
            self.common_mode_rad,
            self.alpha_deg,
            self.array_state,
            self.array_time_ms,
            self.site_order,
            self.noise_subtraction
        );
        let _ = writeln!(s, "\n[classical]\ngrid_z = {}\ngrid_phi = {}", self.grid_z, self.grid_phi);
        let ns = self.ndep_n.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "\n[ndep]\nn_values = {ns}\ntime_ms = {}", self.ndep_time_ms);
        s
    }
}

const SECTIONS: [&str; 10] = ["run", "physics", "protocol", "tomography", "loss", "noise", "ensemble", "array", "classical", "ndep"];

struct Entry<'a> {
    line: usize,
    /// `section.key` from the key table.
    key: &'static str,
    value: &'a str,
}

const KEYS: [&str; 40] = [
    "run.mode",
    "run.master_seed",
    "run.output_dir",
    "physics.chi_law",
    "physics.chi_coeff_hz",
    "physics.omega_hz",
    "physics.delta_hz",
    "physics.delta_coeff_hz",
    "physics.n_ref",
    "protocol.n0",
    "protocol.times_ms",
    "protocol.scheme",
    "protocol.echo",
    "protocol.pulses",
    "protocol.prep_pulse_hz",
    "protocol.echo_pulse_hz",
    "protocol.dt_us",
    "tomography.time_ms",
    "tomography.angles",
    "tomography.shots",
    "loss.channels",
    "noise.sigma_delta_hz",
    "noise.sigma_det",
    "noise.ramp_loss_atoms",
    "ensemble.trajectories",
    "array.sites",
    "array.n_min",
    "array.n_max",
    "array.width",
    "array.shots",
    "array.common_mode_rad",
    "array.alpha_deg",
    "array.state",
    "array.time_ms",
    "array.order",
    "array.noise_subtraction",
    "classical.grid_z",
    "classical.grid_phi",
    "ndep.n_values",
    "ndep.time_ms",
];

fn lookup_key(full: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| *k == full)
}

fn tokenize(text: &str) -> Result<Vec<Entry<'_>>, ConfigError> {
    let mut section: Option<&str> = None;
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax { line, msg: "unterminated section header".into() })?.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::UnknownSection { line, section: name.to_string() });
            }
            section = Some(name);
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key = value, got {content:?}") })?;
        let sec = section.ok_or_else(|| ConfigError::Syntax { line, msg: "key outside of a section".into() })?;
        let full = format!("{sec}.{}", k.trim());
        let key = lookup_key(&full).ok_or(ConfigError::UnknownKey { line, key: full })?;
        if out.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate { line, key: key.to_string() });
        }
        out.push(Entry { line, key, value: v.trim() });
    }
    Ok(out)
}

fn value_error(e: &Entry, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value { line: Some(e.line), key: e.key.to_string(), msg: msg.into() }
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    e.value.parse::<T>().map_err(|err| value_error(e, format!("cannot parse {:?}: {err}", e.value)))
}

fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|err| value_error(e, format!("cannot parse {s:?}: {err}"))))
        .collect()
}

/// A comma list, or `start:stop:step` (inclusive).
fn parse_floats(e: &Entry) -> Result<Vec<f64>, ConfigError> {
    let parts: Vec<&str> = e.value.split(':').map(str::trim).collect();
    if parts.len() == 1 {
        return parse_list(e);
    }
    if parts.len() != 3 {
        return Err(value_error(e, "ranges are written start:stop:step"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|err| value_error(e, format!("cannot parse {s:?}: {err}")));
    let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(h > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(value_error(e, "range needs start <= stop and a positive step"));
    }
    let count = ((b - a) / h + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(value_error(e, "range has too many points"));
    }
    Ok((0..count).map(|i| a + i as f64 * h).collect())
}

/// `p:q:rate` entries separated by commas; rates in 1/s.
fn parse_channels(e: &Entry) -> Result<Vec<JumpChannel>, ConfigError> {
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let f: Vec<&str> = s.split(':').map(str::trim).collect();
            if f.len() != 3 {
                return Err(value_error(e, format!("channel {s:?} is not p:q:rate")));
            }
            let p = f[0].parse::<usize>().map_err(|err| value_error(e, format!("channel {s:?}: {err}")))?;
            let q = f[1].parse::<usize>().map_err(|err| value_error(e, format!("channel {s:?}: {err}")))?;
            let rate = f[2].parse::<f64>().map_err(|err| value_error(e, format!("channel {s:?}: {err}")))?;
            JumpChannel::new(p, q, rate).map_err(|err| value_error(e, err.to_string()))
        })
        .collect()
}
