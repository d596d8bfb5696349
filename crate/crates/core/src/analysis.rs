//! Squeezing estimators: number and spin squeezing, tomography scans, mean
//! spin length, detection noise, array scaling, growth fits and resampling.
//!
//! Sample variances are unbiased (n − 1) throughout. When the total atom
//! number fluctuates from shot to shot the binomial reference uses the mean
//! total `N̄`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mcwf::NoiseModel;
use crate::spin::{Axis, SpinMoments, SpinState};

/// Relative anisotropy below which the transverse variance is treated as
/// isotropic and `α_min` is left undefined.
pub const ISOTROPY_TOL: f64 = 1e-9;

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Populations of one shot, `(N↑, N↓)`.
pub type Counts = (f64, f64);

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub site: usize,
    pub shot: usize,
    pub n_up: f64,
    pub n_down: f64,
}

/// Read-out populations over sites and shots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShotTable {
    pub rows: Vec<Shot>,
}

impl ShotTable {
    pub fn new(rows: Vec<Shot>) -> Result<Self> {
        if rows.iter().any(|r| !r.n_up.is_finite() || !r.n_down.is_finite()) {
            return invalid("shot counts must be finite");
        }
        Ok(Self { rows })
    }

    /// Table for a single site from sampled counts.
    pub fn from_counts(site: usize, counts: &[Counts]) -> Self {
        let rows = counts.iter().enumerate().map(|(i, &(u, d))| Shot { site, shot: i, n_up: u, n_down: d }).collect();
        Self { rows }
    }

    pub fn extend(&mut self, other: ShotTable) {
        self.rows.extend(other.rows);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sorted distinct site indices.
    pub fn sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.site).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Counts of one site ordered by shot index.
    pub fn site_counts(&self, site: usize) -> Vec<Counts> {
        let mut rows: Vec<&Shot> = self.rows.iter().filter(|r| r.site == site).collect();
        rows.sort_by_key(|r| r.shot);
        rows.into_iter().map(|r| (r.n_up, r.n_down)).collect()
    }

    /// Per-shot sums over `sites`. Every site must carry the same shot indices.
    pub fn summed_counts(&self, sites: &[usize]) -> Result<Vec<Counts>> {
        if sites.is_empty() {
            return invalid("no sites selected");
        }
        let mut reference: Option<Vec<usize>> = None;
        let mut sum: Vec<Counts> = Vec::new();
        for &site in sites {
            let mut rows: Vec<&Shot> = self.rows.iter().filter(|r| r.site == site).collect();
            rows.sort_by_key(|r| r.shot);
            let ids: Vec<usize> = rows.iter().map(|r| r.shot).collect();
            match &reference {
                None => {
                    if ids.is_empty() {
                        return invalid(format!("site {site} has no shots"));
                    }
                    if ids.windows(2).any(|w| w[0] == w[1]) {
                        return invalid(format!("site {site} has duplicate shot indices"));
                    }
                    sum = rows.iter().map(|r| (r.n_up, r.n_down)).collect();
                    reference = Some(ids);
                }
                Some(r) => {
                    if *r != ids {
                        return invalid(format!("ragged shot table: site {site} does not match the shot indices of site {}", sites[0]));
                    }
                    for (acc, row) in sum.iter_mut().zip(&rows) {
                        acc.0 += row.n_up;
                        acc.1 += row.n_down;
                    }
                }
            }
        }
        Ok(sum)
    }

    pub const CSV_HEADER: [&'static str; 4] = ["site", "shot", "n_up", "n_down"];

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != Self::CSV_HEADER {
            return invalid(format!("shot table header must be {}", Self::CSV_HEADER.join(",")));
        }
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<Shot>, _>>()?;
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(Self::CSV_HEADER)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Draws `shots` projective `J_z` read-outs of `state` as `(N↑, N↓)`.
pub fn sample_counts<R: Rng + ?Sized>(state: &SpinState, shots: usize, rng: &mut R) -> Vec<Counts> {
    let n = state.atom_count();
    state.sample_jz(shots, rng).into_iter().map(|k| (k as f64, (n - k) as f64)).collect()
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

struct ImbalanceStats {
    var_diff: f64,
    p: f64,
    mean_n: f64,
}

fn imbalance_stats(counts: &[Counts]) -> Result<ImbalanceStats> {
    if counts.len() < 2 {
        return invalid("number squeezing needs at least 2 shots");
    }
    let diff: Vec<f64> = counts.iter().map(|(u, d)| u - d).collect();
    let mean_up = mean(&counts.iter().map(|c| c.0).collect::<Vec<_>>());
    let mean_n = mean(&counts.iter().map(|c| c.0 + c.1).collect::<Vec<_>>());
    if !(mean_n > 0.0) {
        return invalid("mean atom number must be positive");
    }
    let p = mean_up / mean_n;
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::DegeneratePolarization(p));
    }
    Ok(ImbalanceStats { var_diff: sample_variance(&diff), p, mean_n })
}

/// `ξ²_N = Var(N↑ − N↓) / (4p(1−p)N̄)` with `p = ⟨N↑⟩/N̄`.
pub fn number_squeezing(counts: &[Counts]) -> Result<f64> {
    let s = imbalance_stats(counts)?;
    Ok(s.var_diff / (4.0 * s.p * (1.0 - s.p) * s.mean_n))
}

/// Number squeezing after removing `2σ_det²` of detection noise from the
/// imbalance variance. The flag reports flooring at zero.
pub fn number_squeezing_corrected(counts: &[Counts], sigma_det: f64) -> Result<Corrected> {
    let s = imbalance_stats(counts)?;
    let v = subtract_detection_noise(s.var_diff, sigma_det);
    Ok(Corrected { value: v.value / (4.0 * s.p * (1.0 - s.p) * s.mean_n), floored: v.floored })
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Corrected {
    pub value: f64,
    pub floored: bool,
}

/// `variance_obs − 2σ_det²`, floored at zero.
pub fn subtract_detection_noise(variance_obs: f64, sigma_det: f64) -> Corrected {
    let v = variance_obs - 2.0 * sigma_det * sigma_det;
    if v < 0.0 {
        Corrected { value: 0.0, floored: true }
    } else {
        Corrected { value: v, floored: false }
    }
}

/// Applies read-out ramp loss (binomial removal with `ramp_loss_atoms`
/// expected losses per shot) and then independent Gaussian detection noise
/// on both components.
pub fn apply_detection_noise<R: Rng + ?Sized>(table: &ShotTable, noise: &NoiseModel, rng: &mut R) -> Result<ShotTable> {
    noise.validate()?;
    let gauss = Normal::new(0.0, noise.sigma_det).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        let (mut up, mut down) = (r.n_up, r.n_down);
        if noise.ramp_loss_atoms > 0.0 {
            let total = up + down;
            if total > 0.0 {
                let keep = (1.0 - noise.ramp_loss_atoms / total).clamp(0.0, 1.0);
                up = thin(up, keep, rng)?;
                down = thin(down, keep, rng)?;
            }
        }
        if noise.sigma_det > 0.0 {
            up += gauss.sample(rng);
            down += gauss.sample(rng);
        }
        rows.push(Shot { n_up: up, n_down: down, ..*r });
    }
    ShotTable::new(rows)
}

fn thin<R: Rng + ?Sized>(count: f64, keep: f64, rng: &mut R) -> Result<f64> {
    if count < 0.0 {
        return invalid("ramp loss needs non-negative counts");
    }
    let n = count.round() as u64;
    let b = Binomial::new(n, keep).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(b.sample(rng) as f64)
}

/// Closed-form extrema of the tomography variance from the `(J_z, J_y)`
/// covariance block.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AnalyticExtrema {
    pub var_min: f64,
    pub var_max: f64,
    pub xi2_min: f64,
    pub xi2_max: f64,
    /// Angle of minimal variance in `[0, π)`; `None` for isotropic noise.
    pub alpha_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyResult {
    pub angles: Vec<f64>,
    pub xi2_n: Vec<f64>,
    pub xi2_min: f64,
    pub xi2_max: f64,
    /// Argmin in `[0, π)`; `None` when the scan is flat.
    pub alpha_min: Option<f64>,
    /// Measured `Var(J_z)` per angle (moment path) or `Var(N↑−N↓)/4` (shots).
    pub variances: Vec<f64>,
    pub analytic: Option<AnalyticExtrema>,
}

impl TomographyResult {
    pub fn xi2_n_db(&self) -> Vec<f64> {
        self.xi2_n.iter().map(|x| to_db(*x)).collect()
    }

    /// Whether the scan variance extrema match the analytic eigenvalues to
    /// `rel_tol` of the variance range.
    pub fn scan_matches_analytic(&self, rel_tol: f64) -> Option<bool> {
        let a = self.analytic?;
        let lo = self.variances.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.variances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = (a.var_max - a.var_min).max(a.var_max.abs() * 1e-12);
        Some((lo - a.var_min).abs() <= rel_tol * scale + 1e-12 * a.var_max.abs() && (hi - a.var_max).abs() <= rel_tol * scale + 1e-12 * a.var_max.abs())
    }

    pub const CSV_HEADER: &'static str = "angle_rad,xi2_n,xi2_n_db";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (a, x) in self.angles.iter().zip(&self.xi2_n) {
            writeln!(w, "{},{},{}", a, x, to_db(*x))?;
        }
        Ok(())
    }
}

/// `count` equally spaced angles on `[start, start + π)`.
pub fn half_turn_grid(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + PI * i as f64 / count as f64).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return invalid("angle grid needs at least 2 points");
    }
    if grid.iter().any(|a| !a.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("angle grid must be strictly increasing");
    }
    let mut steps: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let step = steps[steps.len() / 2];
    if grid[grid.len() - 1] - grid[0] + step < PI * (1.0 - 1e-9) {
        return invalid("angle grid must cover at least one π period");
    }
    Ok(())
}

fn fold_half_turn(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI - 1e-15 {
        0.0
    } else {
        r
    }
}

/// Tomography scan from state moments: the rotation `exp(−iαJ_x)` maps the
/// measured `J_z` to `J_z cos α + J_y sin α`.
pub fn tomography_from_moments(m: &SpinMoments, grid: &[f64]) -> Result<TomographyResult> {
    check_grid(grid)?;
    let n = m.atom_number;
    if !(n > 0.0) {
        return invalid("tomography needs a positive atom number");
    }
    let cov = m.covariance();
    let (vzz, vyy, vyz) = (cov[2][2], cov[1][1], cov[1][2]);
    let (my, mz) = (m.mean[1], m.mean[2]);
    let a0 = 0.5 * (vzz + vyy);
    let b = 0.5 * (vzz - vyy);
    let c = vyz;
    let amp = b.hypot(c);
    let variance = |alpha: f64| a0 + b * (2.0 * alpha).cos() + c * (2.0 * alpha).sin();
    let xi2 = |alpha: f64| {
        let mean_z = mz * alpha.cos() + my * alpha.sin();
        4.0 * variance(alpha) / (n - 4.0 * mean_z * mean_z / n)
    };
    let alpha_min = if amp > ISOTROPY_TOL * a0.abs().max(f64::MIN_POSITIVE) { Some(fold_half_turn(0.5 * (c.atan2(b) + PI))) } else { None };
    let var_min = a0 - amp;
    let var_max = a0 + amp;
    let (xi2_amin, xi2_amax) = match alpha_min {
        Some(a) => (xi2(a), xi2(a + FRAC_PI_2)),
        None => (4.0 * var_min / n, 4.0 * var_max / n),
    };
    let variances: Vec<f64> = grid.iter().map(|&a| variance(a)).collect();
    let xi2_n: Vec<f64> = grid.iter().map(|&a| xi2(a)).collect();
    let (mut lo, mut hi) = (xi2_amin.min(xi2_amax), xi2_amin.max(xi2_amax));
    for &x in &xi2_n {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    Ok(TomographyResult {
        angles: grid.to_vec(),
        xi2_n,
        xi2_min: lo,
        xi2_max: hi,
        alpha_min,
        variances,
        analytic: Some(AnalyticExtrema { var_min, var_max, xi2_min: xi2_amin, xi2_max: xi2_amax, alpha_min }),
    })
}

/// Tomography scan from one set of shots per angle. `α_min` is refined by a
/// golden-section search on a least-squares `a + b cos 2α + c sin 2α` fit
/// around the scan minimum.
pub fn tomography_from_shots(grid: &[f64], per_angle: &[Vec<Counts>]) -> Result<TomographyResult> {
    check_grid(grid)?;
    if grid.len() != per_angle.len() {
        return invalid("one shot set per angle is required");
    }
    let mut xi2_n = Vec::with_capacity(grid.len());
    let mut variances = Vec::with_capacity(grid.len());
    for counts in per_angle {
        xi2_n.push(number_squeezing(counts)?);
        let d: Vec<f64> = counts.iter().map(|(u, v)| u - v).collect();
        variances.push(sample_variance(&d) / 4.0);
    }
    let mut imin = 0;
    let mut imax = 0;
    for i in 1..xi2_n.len() {
        if xi2_n[i] < xi2_n[imin] {
            imin = i;
        }
        if xi2_n[i] > xi2_n[imax] {
            imax = i;
        }
    }
    let alpha_min = if xi2_n[imin] == xi2_n[imax] {
        None
    } else {
        let fit = fit_half_turn_sinusoid(grid, &xi2_n)?;
        let lo = if imin > 0 { grid[imin - 1] } else { grid[0] - (grid[1] - grid[0]) };
        let hi = if imin + 1 < grid.len() { grid[imin + 1] } else { grid[imin] + (grid[imin] - grid[imin - 1]) };
        Some(fold_half_turn(golden_section_min(|a| fit.eval(a), lo, hi, 1e-10)))
    };
    Ok(TomographyResult { angles: grid.to_vec(), xi2_min: xi2_n[imin], xi2_max: xi2_n[imax], xi2_n, alpha_min, variances, analytic: None })
}

#[derive(Copy, Clone, Debug)]
struct HalfTurnSinusoid {
    a: f64,
    b: f64,
    c: f64,
}

impl HalfTurnSinusoid {
    fn eval(&self, x: f64) -> f64 {
        self.a + self.b * (2.0 * x).cos() + self.c * (2.0 * x).sin()
    }
}

fn fit_half_turn_sinusoid(x: &[f64], y: &[f64]) -> Result<HalfTurnSinusoid> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, (2.0 * xi).cos(), (2.0 * xi).sin());
        ata += row * row.transpose();
        aty += row * yi;
    }
    let sol = ata.lu().solve(&aty).ok_or_else(|| Error::InvalidArgument("degenerate angle grid for sinusoid fit".into()))?;
    Ok(HalfTurnSinusoid { a: sol[0], b: sol[1], c: sol[2] })
}

/// Golden-section minimization on `[lo, hi]`; ties resolve to the lower end.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// `⟨cos φ⟩` estimates.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SpinLength {
    /// Mean of `√(1 − z²)` over read-outs along the long axis.
    pub estimator: f64,
    /// `2|⟨J⟩|/N`.
    pub moment_based: f64,
    /// Read-outs with `|z| > 1` that were clamped.
    pub clamped: usize,
}

impl SpinLength {
    pub fn relative_discrepancy(&self) -> f64 {
        (self.estimator - self.moment_based).abs() / self.moment_based.abs().max(f64::MIN_POSITIVE)
    }
}

/// Mean of `√(1 − z²)` over imbalances; values with `|z| > 1` are clamped and
/// counted.
pub fn cos_phi_from_imbalances(z: &[f64]) -> Result<(f64, usize)> {
    if z.is_empty() {
        return invalid("no imbalance samples");
    }
    let mut clamped = 0;
    let s: f64 = z
        .iter()
        .map(|&v| {
            if v.abs() > 1.0 {
                clamped += 1;
                0.0
            } else {
                (1.0 - v * v).sqrt()
            }
        })
        .sum();
    Ok((s / z.len() as f64, clamped))
}

/// Imbalances `z = (N↑ − N↓)/(N↑ + N↓)` of read-outs.
pub fn imbalances(counts: &[Counts]) -> Result<Vec<f64>> {
    counts
        .iter()
        .map(|(u, d)| {
            let n = u + d;
            if n > 0.0 {
                Ok((u - d) / n)
            } else {
                invalid("shot with no atoms")
            }
        })
        .collect()
}

/// Angle about `x` that brings the long axis onto `z`, given the tomography
/// angle of the short axis.
pub fn long_axis_rotation(alpha_min: f64) -> f64 {
    alpha_min + FRAC_PI_2
}

/// Estimates `⟨cos φ⟩` of `state` by rotating the long axis onto `z` and
/// averaging `√(1 − z²)` over `shots` read-outs.
pub fn mean_spin_length<R: Rng + ?Sized>(state: &SpinState, alpha_min: f64, shots: usize, rng: &mut R) -> Result<SpinLength> {
    let n = state.atom_count();
    if n == 0 || shots == 0 {
        return invalid("mean spin length needs atoms and shots");
    }
    let rotated = state.rotate(Axis::X, long_axis_rotation(alpha_min));
    let z: Vec<f64> = rotated.sample_jz(shots, rng).into_iter().map(|k| (2.0 * k as f64 - n as f64) / n as f64).collect();
    let (estimator, clamped) = cos_phi_from_imbalances(&z)?;
    let m = state.moments();
    Ok(SpinLength { estimator, moment_based: 2.0 * m.mean_length() / n as f64, clamped })
}

/// Shot-based estimator on read-outs already rotated onto the long axis.
pub fn mean_spin_length_from_shots(counts: &[Counts]) -> Result<(f64, usize)> {
    cos_phi_from_imbalances(&imbalances(counts)?)
}

/// `ξ²_S = ξ²_min / ⟨cos φ⟩²`.
pub fn spin_squeezing(xi2_min: f64, cos_phi_mean: f64) -> Result<f64> {
    if cos_phi_mean == 0.0 {
        return Err(Error::UndefinedSpinLength);
    }
    if !(cos_phi_mean > 0.0 && cos_phi_mean <= 1.0 + 1e-12) {
        return invalid(format!("mean spin length must lie in (0, 1], got {cos_phi_mean}"));
    }
    Ok(xi2_min / (cos_phi_mean * cos_phi_mean))
}

/// One cumulative prefix of an array scaling curve.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub sites: usize,
    pub n_tot: f64,
    pub xi2_n: f64,
    /// Jackknife standard error, when there are enough shots.
    pub xi2_n_se: Option<f64>,
}

/// Number squeezing of the summed counts of every prefix of `ordering`.
pub fn array_scaling(table: &ShotTable, ordering: &[usize]) -> Result<Vec<ScalingPoint>> {
    if ordering.len() < 2 {
        return invalid("array scaling needs at least 2 sites");
    }
    let mut out = Vec::with_capacity(ordering.len());
    for k in 1..=ordering.len() {
        let counts = table.summed_counts(&ordering[..k])?;
        let xi2_n = number_squeezing(&counts)?;
        let n_tot = mean(&counts.iter().map(|c| c.0 + c.1).collect::<Vec<_>>());
        let xi2_n_se = if counts.len() >= MIN_JACKKNIFE { Some(jackknife(&counts, |s| number_squeezing(s))?.se) } else { None };
        out.push(ScalingPoint { sites: k, n_tot, xi2_n, xi2_n_se });
    }
    Ok(out)
}

/// Where the known detection noise is removed in an array read-out.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum NoiseSubtraction {
    /// `2kσ²` from the variance of the `k`-site summed imbalance.
    Summed,
    /// `2σ²` from each site's imbalance variance, floored per site.
    PerSite,
}

/// [`array_scaling`] with detection noise `sigma_det` per site and component
/// subtracted in the given order. The standard error is the jackknife error
/// of the summed-order estimator.
pub fn array_scaling_corrected(table: &ShotTable, ordering: &[usize], sigma_det: f64, order: NoiseSubtraction) -> Result<Vec<ScalingPoint>> {
    if ordering.len() < 2 {
        return invalid("array scaling needs at least 2 sites");
    }
    if !(sigma_det >= 0.0) {
        return invalid("detection noise must be non-negative");
    }
    let site_var: Vec<f64> = match order {
        NoiseSubtraction::Summed => Vec::new(),
        NoiseSubtraction::PerSite => ordering
            .iter()
            .map(|&s| {
                let c = table.site_counts(s);
                if c.len() < 2 {
                    return invalid(format!("site {s} needs at least 2 shots"));
                }
                Ok(sample_variance(&c.iter().map(|(u, d)| u - d).collect::<Vec<_>>()))
            })
            .collect::<Result<_>>()?,
    };
    let noise = 2.0 * sigma_det * sigma_det;
    let mut out = Vec::with_capacity(ordering.len());
    for k in 1..=ordering.len() {
        let counts = table.summed_counts(&ordering[..k])?;
        let s = imbalance_stats(&counts)?;
        let summed_sigma = sigma_det * (k as f64).sqrt();
        let var = match order {
            NoiseSubtraction::Summed => subtract_detection_noise(s.var_diff, summed_sigma).value,
            NoiseSubtraction::PerSite => (s.var_diff - site_var[..k].iter().map(|v| v.min(noise)).sum::<f64>()).max(0.0),
        };
        let xi2_n = var / (4.0 * s.p * (1.0 - s.p) * s.mean_n);
        let xi2_n_se = if counts.len() >= MIN_JACKKNIFE { Some(jackknife(&counts, |c| Ok(number_squeezing_corrected(c, summed_sigma)?.value))?.se) } else { None };
        out.push(ScalingPoint { sites: k, n_tot: s.mean_n, xi2_n, xi2_n_se });
    }
    Ok(out)
}

/// `ξ²_Rel = Var(z_L − z_R) / (4p(1−p)(1/N̄_L + 1/N̄_R))` with `p` pooled over
/// both halves; `left` and `right` are per-shot summed counts.
pub fn differential_squeezing(left: &[Counts], right: &[Counts]) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return invalid("both halves must be non-empty");
    }
    if left.len() != right.len() {
        return invalid("halves must have the same number of shots");
    }
    if left.len() < 2 {
        return invalid("differential squeezing needs at least 2 shots");
    }
    let zl = imbalances(left)?;
    let zr = imbalances(right)?;
    let dz: Vec<f64> = zl.iter().zip(&zr).map(|(a, b)| a - b).collect();
    let up: f64 = left.iter().chain(right).map(|c| c.0).sum();
    let tot: f64 = left.iter().chain(right).map(|c| c.0 + c.1).sum();
    let p = up / tot;
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::DegeneratePolarization(p));
    }
    let nl = mean(&left.iter().map(|c| c.0 + c.1).collect::<Vec<_>>());
    let nr = mean(&right.iter().map(|c| c.0 + c.1).collect::<Vec<_>>());
    Ok(sample_variance(&dz) / (4.0 * p * (1.0 - p) * (1.0 / nl + 1.0 / nr)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialFit {
    /// Growth rate of the fitted `A e^{rate·t}` (1/s).
    pub rate: f64,
    pub amplitude: f64,
    /// Residuals of `log(value)` per point in the window.
    pub residuals: Vec<f64>,
    /// Second derivative of a quadratic fit to `log(value)`; negative for
    /// sub-exponential growth.
    pub curvature: f64,
}

/// Least-squares fit of `log(values)` against `times` for points in
/// `window = (t0, t1)` (inclusive).
pub fn exponential_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<ExponentialFit> {
    if times.len() != values.len() {
        return invalid("times and values differ in length");
    }
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(t, _)| **t >= window.0 && **t <= window.1).map(|(t, v)| (*t, *v)).collect();
    if pts.len() < 3 {
        return invalid("exponential fit needs at least 3 points in the window");
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return invalid("exponential fit needs positive values");
    }
    // centre times for conditioning
    let t0 = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let x: Vec<f64> = pts.iter().map(|p| p.0 - t0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return invalid("window needs distinct times");
    }
    let ym = mean(&y);
    let rate = x.iter().zip(&y).map(|(a, b)| a * (b - ym)).sum::<f64>() / sxx;
    let intercept = ym;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (intercept + rate * a)).collect();
    let amplitude = (intercept - rate * t0).exp();

    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&a, &b) in x.iter().zip(&y) {
        let row = Vector3::new(1.0, a, a * a);
        ata += row * row.transpose();
        aty += row * b;
    }
    let curvature = ata.lu().solve(&aty).map(|s| 2.0 * s[2]).unwrap_or(0.0);
    Ok(ExponentialFit { rate, amplitude, residuals, curvature })
}

pub const MIN_JACKKNIFE: usize = 10;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Jackknife {
    /// Statistic of the full sample.
    pub estimate: f64,
    pub bias_corrected: f64,
    pub se: f64,
}

impl Jackknife {
    /// One-standard-error interval around the bias-corrected estimate.
    pub fn interval(&self) -> (f64, f64) {
        (self.bias_corrected - self.se, self.bias_corrected + self.se)
    }
}

/// Delete-one jackknife of `statistic` over `items`.
pub fn jackknife<T: Clone>(items: &[T], statistic: impl Fn(&[T]) -> Result<f64>) -> Result<Jackknife> {
    let n = items.len();
    if n < MIN_JACKKNIFE {
        return invalid(format!("jackknife needs at least {MIN_JACKKNIFE} samples, got {n}"));
    }
    let full = statistic(items)?;
    let mut buf: Vec<T> = items[1..].to_vec();
    let mut loo = Vec::with_capacity(n);
    for i in 0..n {
        // buf holds items without index i
        if i > 0 {
            buf[i - 1] = items[i - 1].clone();
        }
        loo.push(statistic(&buf)?);
    }
    let nf = n as f64;
    let m = mean(&loo);
    let se = ((nf - 1.0) / nf * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt();
    Ok(Jackknife { estimate: full, bias_corrected: nf * full - (nf - 1.0) * m, se })
}

/// Fringe visibility of summed sites.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Visibility {
    /// `2|⟨J_tot⟩|/N_tot`.
    pub v: f64,
    pub n_tot: f64,
}

impl Visibility {
    /// Wineland parameter `ξ²_N / V²`.
    pub fn wineland(&self, xi2_n: f64) -> Result<f64> {
        if self.v == 0.0 {
            return Err(Error::UndefinedSpinLength);
        }
        Ok(xi2_n / (self.v * self.v))
    }
}

pub fn visibility(sites: &[SpinMoments]) -> Result<Visibility> {
    let n_tot: f64 = sites.iter().map(|m| m.atom_number).sum();
    if !(n_tot > 0.0) {
        return invalid("visibility needs a positive total atom number");
    }
    let mut j = [0.0; 3];
    for m in sites {
        for a in 0..3 {
            j[a] += m.mean[a];
        }
    }
    let len = (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sqrt();
    Ok(Visibility { v: 2.0 * len / n_tot, n_tot })
}

/// Read-out model applied at the level of moments: binomial loss of
/// `ramp_loss_atoms` on average and `σ_det²` of added noise per measured
/// `J` component (`2σ_det²` on `N↑ − N↓`).
pub fn degrade_moments(m: &SpinMoments, ramp_loss_atoms: f64, sigma_det: f64) -> Result<SpinMoments> {
    if !(ramp_loss_atoms >= 0.0) || !(sigma_det >= 0.0) {
        return invalid("read-out parameters must be non-negative");
    }
    let n = m.atom_number;
    if !(n > 0.0) {
        return invalid("read-out model needs a positive atom number");
    }
    let keep = (1.0 - ramp_loss_atoms / n).clamp(0.0, 1.0);
    let cov = m.covariance();
    let added = keep * (1.0 - keep) * n / 4.0 + 0.5 * sigma_det * sigma_det;
    let mean = [keep * m.mean[0], keep * m.mean[1], keep * m.mean[2]];
    let mut second = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let c = keep * keep * cov[a][b] + if a == b { added } else { 0.0 };
            second[a][b] = c + mean[a] * mean[b];
        }
    }
    Ok(SpinMoments { mean, second, atom_number: keep * n })
}
