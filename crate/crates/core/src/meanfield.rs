//! Classical (large-N) phase space of the two-mode model.
//!
//! `H_class(z, φ) = N²χ/4 z² − NΩ/2 √(1−z²) cos φ + Nδ/2 z`, with the canonical
//! equations `ż = −(2/N) ∂H/∂φ` and `φ̇ = (2/N) ∂H/∂z`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::PhysicalParams;

/// Classical description is declared invalid beyond this imbalance.
pub const POLE_MARGIN: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ClassicalPoint {
    pub z: f64,
    pub phi: f64,
}

impl ClassicalPoint {
    pub fn new(z: f64, phi: f64) -> Self {
        Self { z, phi: phi.rem_euclid(TAU) }
    }

    fn check(&self) -> Result<()> {
        if !self.z.is_finite() || !self.phi.is_finite() {
            return invalid("classical point must be finite");
        }
        if self.z.abs() > 1.0 - POLE_MARGIN {
            return Err(Error::Pole { z: self.z });
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Stability {
    Center,
    Saddle,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub point: ClassicalPoint,
    pub stability: Stability,
    /// Eigenvalues of the linearized flow (1/s).
    pub eigenvalues: [C64; 2],
}

/// Parameters frozen at a given atom number.
#[derive(Copy, Clone, Debug)]
struct Frozen {
    n: f64,
    n_chi: f64,
    omega: f64,
    delta: f64,
}

impl Frozen {
    fn new(params: &PhysicalParams, n: usize) -> Self {
        Self { n: n as f64, n_chi: n as f64 * params.chi(n), omega: params.omega, delta: params.delta(n) }
    }
}

pub fn classical_energy(p: ClassicalPoint, params: &PhysicalParams, n: usize) -> f64 {
    let f = Frozen::new(params, n);
    energy(&f, p.z, p.phi)
}

fn energy(f: &Frozen, z: f64, phi: f64) -> f64 {
    let nn = f.n;
    0.25 * nn * f.n_chi * z * z - 0.5 * nn * f.omega * (1.0 - z * z).max(0.0).sqrt() * phi.cos() + 0.5 * nn * f.delta * z
}

fn rhs(f: &Frozen, z: f64, phi: f64) -> (f64, f64) {
    let r = (1.0 - z * z).sqrt();
    let dz = -f.omega * r * phi.sin();
    let dphi = f.n_chi * z + f.omega * z * phi.cos() / r + f.delta;
    (dz, dphi)
}

/// `(dz/dt, dφ/dt)`.
pub fn classical_rhs(p: ClassicalPoint, params: &PhysicalParams, n: usize) -> Result<(f64, f64)> {
    p.check()?;
    Ok(rhs(&Frozen::new(params, n), p.z, p.phi))
}

/// Analytic Jacobian `∂(ż, φ̇)/∂(z, φ)`.
pub fn jacobian(p: ClassicalPoint, params: &PhysicalParams, n: usize) -> Result<[[f64; 2]; 2]> {
    p.check()?;
    let f = Frozen::new(params, n);
    let (z, phi) = (p.z, p.phi);
    let r2 = 1.0 - z * z;
    let r = r2.sqrt();
    let (s, c) = phi.sin_cos();
    let dzdz = f.omega * z * s / r;
    let dzdphi = -f.omega * r * c;
    let dphidz = f.n_chi + f.omega * c / (r2 * r);
    let dphidphi = -f.omega * z * s / r;
    Ok([[dzdz, dzdphi], [dphidz, dphidphi]])
}

fn classify(jac: [[f64; 2]; 2]) -> (Stability, [C64; 2]) {
    let tr = jac[0][0] + jac[1][1];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let disc = 0.25 * tr * tr - det;
    let root = C64::new(disc, 0.0).sqrt();
    let half = C64::new(0.5 * tr, 0.0);
    let eig = [half + root, half - root];
    // Hamiltonian flow: trace vanishes, so a saddle has real opposite roots.
    let stability = if disc > 0.0 && det < 0.0 { Stability::Saddle } else { Stability::Center };
    (stability, eig)
}

/// All fixed points away from the poles, sorted by `(φ, z)`.
///
/// Fixed points satisfy `sin φ = 0`; on each branch `φ ∈ {0, π}` the reduced
/// function `Nχ z ± Ω z/√(1−z²) + δ` is solved in closed form when `δ = 0` and by
/// bracketing plus bisection otherwise.
pub fn find_fixed_points(params: &PhysicalParams, n: usize) -> Result<Vec<FixedPoint>> {
    if params.omega == 0.0 {
        return invalid("fixed-point search needs a nonzero coupling");
    }
    let f = Frozen::new(params, n);
    let mut points = Vec::new();
    for (phi, sign) in [(0.0, 1.0), (PI, -1.0)] {
        let roots = if f.delta == 0.0 { branch_roots_undetuned(&f, sign) } else { branch_roots_bracketed(&f, sign) };
        for z in roots {
            let p = ClassicalPoint { z, phi };
            let (stability, eigenvalues) = classify(jacobian(p, params, n)?);
            points.push(FixedPoint { point: p, stability, eigenvalues });
        }
    }
    Ok(points)
}

fn branch_roots_undetuned(f: &Frozen, sign: f64) -> Vec<f64> {
    // z (Nχ + sign Ω/√(1−z²)) = 0
    let mut roots = vec![0.0];
    // √(1−z²) = −sign Ω/(Nχ)
    let ratio = -sign * f.n_chi / f.omega;
    if ratio > 1.0 {
        let z = (1.0 - 1.0 / (ratio * ratio)).sqrt();
        if z > 0.0 && z < 1.0 - POLE_MARGIN {
            roots.insert(0, -z);
            roots.push(z);
        }
    }
    roots
}

fn branch_roots_bracketed(f: &Frozen, sign: f64) -> Vec<f64> {
    // z = sin u maps the open interval onto u ∈ (−π/2, π/2) and spreads
    // points near the poles.
    let g = |u: f64| f.n_chi * u.sin() + sign * f.omega * u.tan() + f.delta;
    let umax = (1.0 - POLE_MARGIN).asin();
    let samples = 8192;
    let mut roots = Vec::new();
    let mut u_prev = -umax;
    let mut g_prev = g(u_prev);
    if g_prev == 0.0 {
        roots.push(u_prev.sin());
    }
    for i in 1..=samples {
        let u = -umax + 2.0 * umax * i as f64 / samples as f64;
        let gu = g(u);
        if gu == 0.0 {
            roots.push(u.sin());
        } else if g_prev != 0.0 && (gu > 0.0) != (g_prev > 0.0) {
            roots.push(bisect(&g, u_prev, u).sin());
        }
        u_prev = u;
        g_prev = gu;
    }
    roots
}

fn bisect(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<ClassicalPoint>,
    /// Set when integration stopped at a pole.
    pub hit_pole: bool,
}

/// RK4 integration of the classical equations, sampled every step.
pub fn integrate_classical(p0: ClassicalPoint, params: &PhysicalParams, n: usize, duration: f64, dt: f64) -> Result<ClassicalTrajectory> {
    p0.check()?;
    if !(dt > 0.0) || !(duration >= 0.0) || !dt.is_finite() || !duration.is_finite() {
        return invalid("duration must be non-negative and dt positive");
    }
    let f = Frozen::new(params, n);
    let steps = (duration / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { duration / steps as f64 };
    let mut times = vec![0.0];
    let mut points = vec![p0];
    let (mut z, mut phi) = (p0.z, p0.phi);
    let limit = 1.0 - POLE_MARGIN;
    let mut hit_pole = false;
    let ok = |z: f64| z.is_finite() && z.abs() <= limit;
    for i in 1..=steps {
        let (k1z, k1p) = rhs(&f, z, phi);
        let (z2, p2) = (z + 0.5 * h * k1z, phi + 0.5 * h * k1p);
        if !ok(z2) {
            hit_pole = true;
            break;
        }
        let (k2z, k2p) = rhs(&f, z2, p2);
        let (z3, p3) = (z + 0.5 * h * k2z, phi + 0.5 * h * k2p);
        if !ok(z3) {
            hit_pole = true;
            break;
        }
        let (k3z, k3p) = rhs(&f, z3, p3);
        let (z4, p4) = (z + h * k3z, phi + h * k3p);
        if !ok(z4) {
            hit_pole = true;
            break;
        }
        let (k4z, k4p) = rhs(&f, z4, p4);
        let zn = z + h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        let pn = phi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        if !ok(zn) {
            hit_pole = true;
            break;
        }
        z = zn;
        phi = pn;
        times.push(i as f64 * h);
        points.push(ClassicalPoint::new(z, phi));
    }
    Ok(ClassicalTrajectory { times, points, hit_pole })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Region {
    InsideSeparatrixUpper,
    InsideSeparatrixLower,
    Libration,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::InsideSeparatrixUpper => "inside-separatrix-upper",
            Region::InsideSeparatrixLower => "inside-separatrix-lower",
            Region::Libration => "libration",
        }
    }
}

/// The saddle fixed point, when `Λ > 1` and `δ = 0`.
pub fn saddle(params: &PhysicalParams, n: usize) -> Result<FixedPoint> {
    let lambda = params.lambda(n);
    if params.omega == 0.0 || !(lambda > 1.0) || params.delta(n) != 0.0 {
        return Err(Error::NoSeparatrix { lambda });
    }
    find_fixed_points(params, n)?
        .into_iter()
        .find(|p| p.stability == Stability::Saddle)
        .ok_or(Error::NoSeparatrix { lambda })
}

/// Classifies a point against the separatrix through the saddle: points on
/// the far side of the saddle energy from the stable equatorial point lie
/// in one of the two self-trapped lobes, chosen by the sign of `z`. The
/// separatrix itself counts as libration.
pub fn classify_region(p: ClassicalPoint, params: &PhysicalParams, n: usize) -> Result<Region> {
    let s = saddle(params, n)?;
    let f = Frozen::new(params, n);
    let e_saddle = energy(&f, s.point.z, s.point.phi);
    // the stable equatorial point sits opposite the saddle
    let e_stable = energy(&f, 0.0, s.point.phi + PI);
    let e = energy(&f, p.z, p.phi);
    let beyond = if e_stable < e_saddle { e > e_saddle } else { e < e_saddle };
    Ok(if !beyond {
        Region::Libration
    } else if p.z > 0.0 {
        Region::InsideSeparatrixUpper
    } else {
        Region::InsideSeparatrixLower
    })
}

/// One grid row of a phase portrait.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PortraitSample {
    pub z: f64,
    pub phi: f64,
    pub dzdt: f64,
    pub dphidt: f64,
    pub region: Option<Region>,
    pub energy: f64,
}

/// Samples the flow on a `nz × nphi` grid strictly inside the poles.
pub fn portrait(params: &PhysicalParams, n: usize, nz: usize, nphi: usize) -> Result<Vec<PortraitSample>> {
    if nz < 2 || nphi < 1 {
        return invalid("portrait grid needs nz >= 2 and nphi >= 1");
    }
    let f = Frozen::new(params, n);
    let zmax = 1.0 - 1e-3;
    let mut out = Vec::with_capacity(nz * nphi);
    for i in 0..nz {
        let z = -zmax + 2.0 * zmax * i as f64 / (nz - 1) as f64;
        for j in 0..nphi {
            let phi = TAU * j as f64 / nphi as f64;
            let p = ClassicalPoint { z, phi };
            let (dzdt, dphidt) = rhs(&f, z, phi);
            let region = classify_region(p, params, n).ok();
            out.push(PortraitSample { z, phi, dzdt, dphidt, region, energy: energy(&f, z, phi) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::ChiLaw;

    const N: usize = 500;

    fn params(lambda: f64, delta: f64) -> PhysicalParams {
        let omega = TAU * 19.0;
        PhysicalParams { chi: ChiLaw::FixedProduct { n_chi: lambda * omega }, ..PhysicalParams::constant(0.0, omega, delta) }
    }

    #[test]
    fn equator_fixed_point_rhs() {
        let (dz, dphi) = classical_rhs(ClassicalPoint::new(0.0, 0.0), &params(1.5, 0.0), N).unwrap();
        assert_eq!((dz, dphi), (0.0, 0.0));
    }

    #[test]
    fn pure_rotation_rhs() {
        let p = PhysicalParams::constant(0.0, 1.0, 0.0);
        let (dz, dphi) = classical_rhs(ClassicalPoint::new(0.0, PI / 2.0), &p, N).unwrap();
        assert!((dz + 1.0).abs() < 1e-15);
        assert!(dphi.abs() < 1e-15);
    }

    #[test]
    fn pole_is_rejected() {
        let p = params(1.5, 0.0);
        assert!(matches!(classical_rhs(ClassicalPoint::new(1.0, 0.0), &p, N), Err(Error::Pole { .. })));
    }

    #[test]
    fn fixed_point_census() {
        let low = find_fixed_points(&params(0.5, 0.0), N).unwrap();
        assert_eq!(low.len(), 2);
        assert!(low.iter().all(|p| p.stability == Stability::Center));

        let high = find_fixed_points(&params(1.5, 0.0), N).unwrap();
        assert_eq!(high.len(), 4);
        let saddles: Vec<_> = high.iter().filter(|p| p.stability == Stability::Saddle).collect();
        assert_eq!(saddles.len(), 1);
        assert_eq!(saddles[0].point.phi, PI);
        assert_eq!(saddles[0].point.z, 0.0);
        let zs = (1.0 - 1.0 / 2.25_f64).sqrt();
        let lobes: Vec<_> = high.iter().filter(|p| p.point.z != 0.0).collect();
        assert_eq!(lobes.len(), 2);
        for l in lobes {
            assert_eq!(l.point.phi, PI);
            assert!((l.point.z.abs() - zs).abs() < 1e-12);
            assert_eq!(l.stability, Stability::Center);
        }
    }

    #[test]
    fn saddle_rate() {
        let s = saddle(&params(1.5, 0.0), N).unwrap();
        let omega = TAU * 19.0;
        let expect = omega * 0.5_f64.sqrt();
        let re = s.eigenvalues[0].re.abs();
        assert!((re - expect).abs() < 1e-9 * expect);
        assert!((re / TAU - 13.435).abs() < 1e-3);
        assert!((s.eigenvalues[0].re + s.eigenvalues[1].re).abs() < 1e-9);
    }

    #[test]
    fn detuned_points_by_bisection() {
        let p = params(1.5, TAU * 2.0);
        let pts = find_fixed_points(&p, N).unwrap();
        assert!(pts.len() == 2 || pts.len() == 4);
        for fp in &pts {
            let (dz, dphi) = classical_rhs(fp.point, &p, N).unwrap();
            assert!(dz.abs() < 1e-9 && dphi.abs() < 1e-7, "{dz} {dphi}");
        }
        // a small detuning keeps the topology
        assert_eq!(find_fixed_points(&params(1.5, TAU * 0.1), N).unwrap().len(), 4);
    }

    #[test]
    fn region_examples() {
        let p = params(1.5, 0.0);
        assert_eq!(classify_region(ClassicalPoint::new(0.0, PI), &p, N).unwrap(), Region::Libration);
        assert_eq!(classify_region(ClassicalPoint::new(0.0, 0.0), &p, N).unwrap(), Region::Libration);
        assert_eq!(classify_region(ClassicalPoint::new(0.9, PI), &p, N).unwrap(), Region::InsideSeparatrixUpper);
        assert_eq!(classify_region(ClassicalPoint::new(-0.9, PI), &p, N).unwrap(), Region::InsideSeparatrixLower);
        // energy below the saddle: the near-pole point lies outside the lobes
        assert_eq!(classify_region(ClassicalPoint::new(0.99, PI), &p, N).unwrap(), Region::Libration);
        assert!(matches!(classify_region(ClassicalPoint::new(0.0, 0.0), &params(0.5, 0.0), N), Err(Error::NoSeparatrix { .. })));
    }

    #[test]
    fn center_is_stationary() {
        let tr = integrate_classical(ClassicalPoint::new(0.0, 0.0), &params(1.5, 0.0), N, 0.05, 1e-5).unwrap();
        assert!(tr.points.iter().all(|p| p.z.abs() < 1e-14 && (p.phi.min(TAU - p.phi)) < 1e-14));
    }

    #[test]
    fn rabi_circle() {
        let omega = TAU * 19.0;
        let p = PhysicalParams::constant(0.0, omega, 0.0);
        let tr = integrate_classical(ClassicalPoint::new(0.0, PI / 2.0), &p, N, 0.01, 1e-6).unwrap();
        for (t, pt) in tr.times.iter().zip(&tr.points).step_by(500) {
            assert!((pt.z + (omega * t).sin()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn energy_conserved() {
        let p = params(1.5, 0.0);
        let p0 = ClassicalPoint::new(0.3, 2.0);
        let e0 = classical_energy(p0, &p, N);
        let tr = integrate_classical(p0, &p, N, 0.1, 1e-6).unwrap();
        assert!(!tr.hit_pole);
        for pt in &tr.points {
            let e = classical_energy(*pt, &p, N);
            assert!(((e - e0) / e0).abs() < 1e-8);
        }
    }

    #[test]
    fn pole_crossing_truncates() {
        // pure rotation drives z through the pole
        let p = PhysicalParams::constant(0.0, TAU * 19.0, 0.0);
        let tr = integrate_classical(ClassicalPoint::new(0.0, -PI / 2.0), &p, N, 0.05, 1e-5).unwrap();
        assert!(tr.hit_pole);
        assert!(*tr.times.last().unwrap() < 0.05);
    }
}
