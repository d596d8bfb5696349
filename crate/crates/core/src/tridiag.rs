//! Tridiagonal generators in the occupation basis and their exponentials.
//!
//! Every collective-spin operator used here couples `k` only to `k ± 1`, so a
//! generator is stored as its diagonal plus the sub-diagonal `A[k+1][k]`. The
//! super-diagonal is always the complex conjugate of the sub-diagonal, which
//! means any non-Hermitian part lives on the diagonal (the loss terms of an
//! effective Hamiltonian).

use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<C64>,
    /// `sub[k] = A[k+1][k]`; `A[k][k+1] = conj(sub[k])`.
    pub sub: Vec<C64>,
}

impl Tridiagonal {
    pub fn new(diag: Vec<C64>, sub: Vec<C64>) -> Self {
        assert_eq!(diag.len(), sub.len() + 1, "sub-diagonal must be one shorter than the diagonal");
        Self { diag, sub }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![C64::new(0.0, 0.0); dim], vec![C64::new(0.0, 0.0); dim.saturating_sub(1)])
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        for k in 0..n {
            y[k] = self.diag[k] * x[k];
        }
        for k in 0..n.saturating_sub(1) {
            let s = self.sub[k];
            y[k + 1] += s * x[k];
            y[k] += s.conj() * x[k + 1];
        }
    }

    /// `⟨x|A|x⟩` without normalization.
    pub fn expectation(&self, x: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (d, c) in self.diag.iter().zip(x) {
            acc += d * c.norm_sqr();
        }
        for k in 0..self.sub.len() {
            let s = self.sub[k];
            acc += x[k + 1].conj() * s * x[k] + x[k].conj() * s.conj() * x[k + 1];
        }
        acc
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|k| {
                let mut r = self.diag[k].norm();
                if k > 0 {
                    r += self.sub[k - 1].norm();
                }
                if k + 1 < n {
                    r += self.sub[k].norm();
                }
                r
            })
            .fold(0.0, f64::max)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.diag.iter_mut().for_each(|d| *d *= factor);
        self.sub.iter_mut().for_each(|s| *s *= factor);
        self
    }

    pub fn add_assign_scaled(&mut self, other: &Tridiagonal, factor: f64) {
        assert_eq!(self.dim(), other.dim());
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += b * factor;
        }
        for (a, b) in self.sub.iter_mut().zip(&other.sub) {
            *a += b * factor;
        }
    }

    pub fn shift_diag(&mut self, shift: C64) {
        self.diag.iter_mut().for_each(|d| *d += shift);
    }
}

/// Bessel functions `J_0(a) .. J_kmax(a)` for `a >= 0` by Miller's backward
/// recurrence, normalized with `J_0 + 2 Σ J_2m = 1`.
pub fn bessel_j_sequence(a: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if a == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let mut start = kmax.max(a.ceil() as usize) + 30 + (12.0 * a.cbrt()) as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut next = 0.0_f64; // j_{m+1}
    let mut cur = 1e-300_f64; // j_m
    let mut norm = 0.0_f64;
    for m in (1..=start).rev() {
        // j_{m-1} = (2m / a) j_m - j_{m+1}
        let prev = (2.0 * m as f64 / a) * cur - next;
        if m <= kmax {
            out[m] = cur;
        }
        if m % 2 == 0 {
            norm += 2.0 * cur;
        }
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            norm *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    out[0] = cur;
    norm += cur;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Number of Chebyshev terms for `exp(-i a x)` on `x ∈ [-1, 1]` to double precision.
fn chebyshev_order(a: f64) -> usize {
    let a = a.abs();
    (a + 12.0 * a.cbrt() + 25.0).ceil() as usize
}

/// `exp(-i t A) x` for Hermitian `A` whose spectrum lies in
/// `[center - half_width, center + half_width]`, by Chebyshev expansion.
pub fn chebyshev_propagate(op: &Tridiagonal, center: f64, half_width: f64, t: f64, x: &[C64]) -> Vec<C64> {
    let n = op.dim();
    if half_width == 0.0 || t == 0.0 {
        let phase = C64::from_polar(1.0, -center * t);
        return x.iter().map(|c| c * phase).collect();
    }
    let a = t * half_width;
    let order = chebyshev_order(a);
    let bessel = bessel_j_sequence(a.abs(), order);
    // (-i)^k with the sign of t folded in: exp(-i a x) with a < 0 is exp(+i|a| x).
    let unit = if a >= 0.0 { C64::new(0.0, -1.0) } else { C64::new(0.0, 1.0) };

    let inv = 1.0 / half_width;
    // X v = (A - center) v / half_width
    let apply_scaled = |v: &[C64], out: &mut [C64]| {
        op.apply(v, out);
        for k in 0..n {
            out[k] = (out[k] - v[k] * center) * inv;
        }
    };

    let mut prev: Vec<C64> = x.to_vec();
    let mut cur = vec![C64::new(0.0, 0.0); n];
    apply_scaled(&prev, &mut cur);

    let mut acc: Vec<C64> = prev.iter().map(|v| v * bessel[0]).collect();
    let mut coeff = unit * 2.0;
    for k in 1..=order {
        let c = coeff * bessel[k];
        for i in 0..n {
            acc[i] += c * cur[i];
        }
        if k == order {
            break;
        }
        coeff *= unit;
        let mut next = vec![C64::new(0.0, 0.0); n];
        apply_scaled(&cur, &mut next);
        for i in 0..n {
            next[i] = next[i] * 2.0 - prev[i];
        }
        prev = std::mem::replace(&mut cur, next);
    }
    let phase = C64::from_polar(1.0, -center * t);
    acc.iter_mut().for_each(|v| *v *= phase);
    acc
}
