//! Collective spin of `N` two-level bosons in the symmetric (Dicke) manifold.
//!
//! Basis index `k` counts atoms in `|↑⟩`, so `N↑ = k`, `N↓ = N - k` and `J_z`
//! is diagonal with entries `k - N/2`. Rotations are `exp(-i angle J_axis)`.

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::tridiag::{chebyshev_propagate, Tridiagonal};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => invalid(format!("unknown axis '{other}'")),
        }
    }
}

/// `⟨k+1| J+ |k⟩ = sqrt((k+1)(N-k))`.
#[inline]
pub fn ladder(n: usize, k: usize) -> f64 {
    (((k + 1) * (n - k)) as f64).sqrt()
}

/// `J_z` eigenvalue of basis state `k`.
#[inline]
pub fn jz_value(n: usize, k: usize) -> f64 {
    k as f64 - 0.5 * n as f64
}

/// `cos(psi) J_x + sin(psi) J_y` as a tridiagonal generator.
pub fn equatorial_generator(n: usize, psi: f64) -> Tridiagonal {
    let phase = C64::from_polar(0.5, -psi);
    let sub = (0..n).map(|k| phase * ladder(n, k)).collect();
    Tridiagonal::new(vec![C64::new(0.0, 0.0); n + 1], sub)
}

/// The collective operator `J_axis` as a tridiagonal generator.
pub fn spin_operator(n: usize, axis: Axis) -> Tridiagonal {
    match axis {
        Axis::X => equatorial_generator(n, 0.0),
        Axis::Y => equatorial_generator(n, std::f64::consts::FRAC_PI_2),
        Axis::Z => Tridiagonal::new(
            (0..=n).map(|k| C64::new(jz_value(n, k), 0.0)).collect(),
            vec![C64::new(0.0, 0.0); n],
        ),
    }
}

/// Normalized state vector over the `N + 1` occupation numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinState {
    atom_count: usize,
    amplitudes: Vec<C64>,
}

impl SpinState {
    /// Builds a state from raw amplitudes, normalizing them. The atom number is
    /// `amplitudes.len() - 1`.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return invalid("amplitude vector must have at least one entry");
        }
        if amplitudes.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return invalid("amplitudes must be finite");
        }
        let norm = amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return invalid("amplitude vector has zero norm");
        }
        let atom_count = amplitudes.len() - 1;
        let mut state = Self { atom_count, amplitudes };
        state.scale(1.0 / norm);
        Ok(state)
    }

    /// Fock state with `k` atoms in `|↑⟩`.
    pub fn basis(atom_count: usize, k: usize) -> Result<Self> {
        if k > atom_count {
            return invalid(format!("basis index {k} exceeds atom number {atom_count}"));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); atom_count + 1];
        amplitudes[k] = C64::new(1.0, 0.0);
        Ok(Self { atom_count, amplitudes })
    }

    /// Coherent spin state pointing along polar angle `theta` (0 = all atoms in
    /// `|↑⟩`) and azimuth `phi`:
    /// `c_k = sqrt(C(N,k)) cos(θ/2)^k sin(θ/2)^(N-k) e^{-ikφ}`.
    ///
    /// With this convention the mean spin is
    /// `(N/2)(sin θ cos φ, sin θ sin φ, cos θ)`.
    pub fn coherent(atom_count: usize, theta: f64, phi: f64) -> Result<Self> {
        if atom_count == 0 {
            return invalid("coherent state needs N >= 1");
        }
        if !theta.is_finite() || !phi.is_finite() {
            return invalid("coherent state angles must be finite");
        }
        let n = atom_count;
        let (cu, cd) = ((0.5 * theta).cos(), (0.5 * theta).sin());
        let (lu, ld) = (cu.abs().ln(), cd.abs().ln());
        let mut ln_binom = 0.0_f64;
        let mut amplitudes = Vec::with_capacity(n + 1);
        for k in 0..=n {
            if k > 0 {
                ln_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            let up = if k == 0 { 0.0 } else { k as f64 * lu };
            let down = if k == n { 0.0 } else { (n - k) as f64 * ld };
            let mag = (0.5 * ln_binom + up + down).exp();
            let negative = (cu < 0.0 && k % 2 == 1) ^ (cd < 0.0 && (n - k) % 2 == 1);
            let sign = if negative { -1.0 } else { 1.0 };
            amplitudes.push(C64::from_polar(sign * mag, -(k as f64) * phi));
        }
        Self::from_amplitudes(amplitudes)
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn dim(&self) -> usize {
        self.atom_count + 1
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    fn scale(&mut self, factor: f64) {
        self.amplitudes.iter_mut().for_each(|c| *c *= factor);
    }

    /// Rescales to unit norm. Returns the norm before rescaling.
    pub(crate) fn renormalize(&mut self) -> f64 {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            self.scale(1.0 / norm);
        }
        norm
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &SpinState) -> C64 {
        assert_eq!(self.dim(), other.dim(), "overlap between different atom numbers");
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|⟨self|other⟩|²`, insensitive to global phase.
    pub fn fidelity(&self, other: &SpinState) -> f64 {
        self.overlap(other).norm_sqr()
    }

    pub fn moments(&self) -> SpinMoments {
        SpinMoments::of_state(self)
    }

    /// Applies `exp(-i angle J_axis)`.
    pub fn rotate(&self, axis: Axis, angle: f64) -> SpinState {
        match axis {
            Axis::Z => self.rotate_z(angle),
            Axis::X => self.rotate_equatorial(0.0, angle),
            Axis::Y => self.rotate_equatorial(std::f64::consts::FRAC_PI_2, angle),
        }
    }

    fn rotate_z(&self, angle: f64) -> SpinState {
        let n = self.atom_count;
        let amplitudes = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, c)| c * C64::from_polar(1.0, -angle * jz_value(n, k)))
            .collect();
        let mut out = SpinState { atom_count: n, amplitudes };
        out.renormalize();
        out
    }

    /// Applies `exp(-i angle (cos ψ J_x + sin ψ J_y))`.
    pub fn rotate_equatorial(&self, psi: f64, angle: f64) -> SpinState {
        let n = self.atom_count;
        // exp(-i 2π J_n) = (-1)^N, so reduce the angle into (-π, π].
        let turns = ((angle + std::f64::consts::PI) / std::f64::consts::TAU).floor();
        let reduced = angle - turns * std::f64::consts::TAU;
        let flip = n % 2 == 1 && (turns as i64).rem_euclid(2) == 1;
        let generator = equatorial_generator(n, psi);
        let mut amplitudes = chebyshev_propagate(&generator, 0.0, 0.5 * n as f64, reduced, &self.amplitudes);
        if flip {
            amplitudes.iter_mut().for_each(|c| *c = -*c);
        }
        let mut out = SpinState { atom_count: n, amplitudes };
        out.renormalize();
        out
    }

    /// Draws `shots` projective `J_z` measurements, returning `N↑` per shot.
    pub fn sample_jz<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Vec<usize> {
        let sampler = OccupationSampler::new(self);
        (0..shots).map(|_| sampler.draw(rng)).collect()
    }
}

/// Inverse-CDF sampler over `|c_k|²`.
#[derive(Clone, Debug)]
pub struct OccupationSampler {
    cumulative: Vec<f64>,
}

impl OccupationSampler {
    pub fn new(state: &SpinState) -> Self {
        let mut acc = 0.0;
        let cumulative = state
            .amplitudes()
            .iter()
            .map(|c| {
                acc += c.norm_sqr();
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }
}

/// First and second moments of the collective spin.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SpinMoments {
    /// `(⟨J_x⟩, ⟨J_y⟩, ⟨J_z⟩)`.
    pub mean: [f64; 3],
    /// Symmetrized second moments `½⟨{J_a, J_b}⟩`.
    pub second: [[f64; 3]; 3],
    /// Mean atom number the moments refer to.
    pub atom_number: f64,
}

impl SpinMoments {
    pub fn of_state(state: &SpinState) -> Self {
        let n = state.atom_count();
        let c = state.amplitudes();
        let j = 0.5 * n as f64;
        let casimir = j * (j + 1.0);

        let mut jz = 0.0;
        let mut jz2 = 0.0;
        for (k, a) in c.iter().enumerate() {
            let m = jz_value(n, k);
            let p = a.norm_sqr();
            jz += m * p;
            jz2 += m * m * p;
        }
        // ⟨J+⟩, ⟨J+ J+⟩ and ⟨J+ J_z + J_z J+⟩
        let mut jp = C64::new(0.0, 0.0);
        let mut jp2 = C64::new(0.0, 0.0);
        let mut jpz = C64::new(0.0, 0.0);
        for k in 0..n {
            let a = ladder(n, k);
            let term = c[k + 1].conj() * c[k] * a;
            jp += term;
            jpz += term * (jz_value(n, k) + jz_value(n, k + 1));
            if k + 1 < n {
                jp2 += c[k + 2].conj() * c[k] * a * ladder(n, k + 1);
            }
        }
        let transverse = casimir - jz2;
        let xx = 0.5 * jp2.re + 0.5 * transverse;
        let yy = -0.5 * jp2.re + 0.5 * transverse;
        let xy = 0.5 * jp2.im;
        let xz = 0.5 * jpz.re;
        let yz = 0.5 * jpz.im;
        Self {
            mean: [jp.re, jp.im, jz],
            second: [[xx, xy, xz], [xy, yy, yz], [xz, yz, jz2]],
            atom_number: n as f64,
        }
    }

    /// `½⟨{J_a, J_b}⟩ - ⟨J_a⟩⟨J_b⟩`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let mut cov = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] = self.second[a][b] - self.mean[a] * self.mean[b];
            }
        }
        cov
    }

    pub fn variance(&self, axis: Axis) -> f64 {
        let i = axis.index();
        self.second[i][i] - self.mean[i] * self.mean[i]
    }

    pub fn mean_length(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Moments after `exp(-i angle J_axis)`: the mean rotates as a vector and
    /// the second-moment matrix by congruence.
    pub fn rotated(&self, axis: Axis, angle: f64) -> SpinMoments {
        let r = rotation_matrix(axis, angle);
        let mut mean = [0.0; 3];
        for a in 0..3 {
            mean[a] = (0..3).map(|b| r[a][b] * self.mean[b]).sum();
        }
        let mut second = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for c in 0..3 {
                    for d in 0..3 {
                        s += r[a][c] * self.second[c][d] * r[b][d];
                    }
                }
                second[a][b] = s;
            }
        }
        SpinMoments { mean, second, atom_number: self.atom_number }
    }
}

/// Active rotation of the mean spin under `exp(-i angle J_axis)`.
pub fn rotation_matrix(axis: Axis, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}
