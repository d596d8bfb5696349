use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tnt_core::analysis::{self, half_turn_grid};
use tnt_core::hamiltonian::{build_hamiltonian, evolve, ChiLaw, PhysicalParams, Rk4, default_dt};
use tnt_core::pipeline;
use tnt_core::sequence::{run_sequence, PulseMode, Protocol};
use tnt_core::spin::{spin_operator, Axis, SpinState};

fn dense(op: &tnt_core::tridiag::Tridiagonal) -> DMatrix<C64> {
    let d = op.dim();
    let mut m = DMatrix::<C64>::zeros(d, d);
    for k in 0..d {
        m[(k, k)] = op.diag[k];
        if k + 1 < d {
            m[(k + 1, k)] = op.sub[k];
            m[(k, k + 1)] = op.sub[k].conj();
        }
    }
    m
}

fn expm_apply(h: &DMatrix<C64>, t: f64, c: &[C64]) -> Vec<C64> {
    let u = (h * C64::new(0.0, -t)).exp();
    let v = nalgebra::DVector::from_column_slice(c);
    (u * v).iter().cloned().collect()
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> SpinState {
    let amps = (0..=n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    SpinState::from_amplitudes(amps).unwrap()
}

fn fidelity_to(c: &[C64], s: &SpinState) -> f64 {
    c.iter().zip(s.amplitudes()).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr()
}

#[test]
fn full_x_turn_gives_parity_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=6 {
        let s = random_state(n, &mut rng);
        let out = s.rotate(Axis::X, TAU);
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b * sign).norm() < 1e-10);
        }
        // dense matrix exponential oracle
        let jx = dense(&spin_operator(n, Axis::X));
        let oracle = expm_apply(&jx, 1.3, s.amplitudes());
        assert!(1.0 - fidelity_to(&oracle, &s.rotate(Axis::X, 1.3)) < 1e-12);
    }
}

#[test]
fn commutator_matches_jz() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [3, 7, 10] {
        let s = random_state(n, &mut rng);
        let jx = dense(&spin_operator(n, Axis::X));
        let jy = dense(&spin_operator(n, Axis::Y));
        let jz = dense(&spin_operator(n, Axis::Z));
        let v = nalgebra::DVector::from_column_slice(s.amplitudes());
        let comm = &jx * &jy - &jy * &jx;
        let lhs = v.dotc(&(comm * &v));
        let mz = s.moments().mean[2];
        assert!((lhs - C64::new(0.0, mz)).norm() < 1e-9);
        assert!((v.dotc(&(jz * &v)).re - mz).abs() < 1e-12);
    }
}

#[test]
fn sampling_follows_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_state(12, &mut rng);
    let shots = 100_000;
    let mut hist = vec![0usize; 13];
    for k in s.sample_jz(shots, &mut rng) {
        hist[k] += 1;
    }
    let chi2: f64 = s.probabilities().iter().zip(&hist).filter(|(p, _)| **p * shots as f64 > 5.0).map(|(p, &o)| (o as f64 - p * shots as f64).powi(2) / (p * shots as f64)).sum();
    // 1 % critical value for ≤ 12 degrees of freedom
    assert!(chi2 < 26.2, "{chi2}");
    let basis = SpinState::basis(10, 3).unwrap();
    assert!(basis.sample_jz(100, &mut rng).iter().all(|&k| k == 3));
}

#[test]
fn equator_sampling_is_binomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = SpinState::coherent(100, FRAC_PI_2, 0.0).unwrap();
    let shots = 100_000;
    let d: Vec<f64> = s.sample_jz(shots, &mut rng).into_iter().map(|k| 2.0 * k as f64 - 100.0).collect();
    let m = d.iter().sum::<f64>() / shots as f64;
    let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (shots as f64 - 1.0);
    assert!((v - 100.0).abs() < 3.0 * 100.0 * (2.0 / shots as f64).sqrt(), "{v}");
    let counts = analysis::sample_counts(&SpinState::coherent(400, FRAC_PI_2, 0.0).unwrap(), 20_000, &mut rng);
    let xi = analysis::number_squeezing(&counts).unwrap();
    assert!((xi - 1.0).abs() < 3.0 * (2.0 / 20_000.0_f64).sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_preserves_norm(n in 1usize..400, axis in 0usize..3, angle in -20.0f64..20.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let ax = [Axis::X, Axis::Y, Axis::Z][axis];
        let out = s.rotate(ax, angle);
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert_eq!(out.dim(), n + 1);
    }

    #[test]
    fn rotations_compose(n in 1usize..120, a in -4.0f64..4.0, b in -4.0f64..4.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let two = s.rotate(Axis::X, a).rotate(Axis::X, b);
        let one = s.rotate(Axis::X, a + b);
        let diff: f64 = two.amplitudes().iter().zip(one.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(diff < 1e-10, "{}", diff);
    }

    #[test]
    fn moments_respect_bounds(n in 1usize..200, theta in 0.0f64..PI, phi in 0.0f64..TAU, t in 0.0f64..0.02, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = [
            random_state(n, &mut rng),
            evolve(&SpinState::coherent(n, theta, phi).unwrap(), &PhysicalParams::ideal_default(), t, None).unwrap(),
        ];
        for s in &states {
            let m = s.moments();
            let nn = n as f64;
            prop_assert!(m.mean_length() <= nn / 2.0 + 1e-9);
            let cov = nalgebra::Matrix3::from_fn(|i, j| m.covariance()[i][j]);
            prop_assert!((cov - cov.transpose()).abs().max() < 1e-9);
            let eig = cov.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|e| *e > -1e-9 * nn * nn));
            let v = |a: Axis| m.variance(a);
            let tol = 1e-6 * nn * nn;
            prop_assert!(v(Axis::Y) * v(Axis::Z) >= 0.25 * m.mean[0].powi(2) - tol);
            prop_assert!(v(Axis::Z) * v(Axis::X) >= 0.25 * m.mean[1].powi(2) - tol);
            prop_assert!(v(Axis::X) * v(Axis::Y) >= 0.25 * m.mean[2].powi(2) - tol);
        }
    }

    #[test]
    fn scan_extrema_match_covariance_eigenvalues(n in 4usize..300, t in 0.0f64..0.02, phi in 0.0f64..TAU, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = if seed % 2 == 0 {
            random_state(n, &mut rng)
        } else {
            evolve(&SpinState::coherent(n, FRAC_PI_2, phi).unwrap(), &PhysicalParams::ideal_default(), t, None).unwrap()
        };
        let r = analysis::tomography_from_moments(&s.moments(), &half_turn_grid(0.0, 720)).unwrap();
        // grid spacing 0.25° bounds the scan error by amplitude·(Δα)²/2 ≈ 1e-5 of the range
        prop_assert_eq!(r.scan_matches_analytic(2e-5), Some(true));
        for x in &r.xi2_n {
            prop_assert!(*x >= r.xi2_min - 1e-12 && *x <= r.xi2_max + 1e-12);
        }
    }
}

#[test]
fn evolution_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = PhysicalParams { delta_ext: TAU * 3.0, ..PhysicalParams::experiment_default() };
    for n in [5, 16, 32] {
        let s = random_state(n, &mut rng);
        let h = dense(&build_hamiltonian(&params, n));
        let t = 0.013;
        let oracle = expm_apply(&h, t, s.amplitudes());
        let out = evolve(&s, &params, t, None).unwrap();
        assert!(1.0 - fidelity_to(&oracle, &out) < 1e-8, "N = {n}");
    }
}

#[test]
fn norm_drift_and_energy_conservation() {
    let params = PhysicalParams::experiment_default();
    for n in [100, 500, 1000] {
        let s = SpinState::coherent(n, FRAC_PI_2, PI).unwrap();
        let op = build_hamiltonian(&params, n);
        let e0 = op.expectation(s.amplitudes()).re;
        let dt = default_dt(&op, e0);
        let mut psi = s.amplitudes().to_vec();
        let mut rk = Rk4::new(psi.len());
        let steps = (1e-3 / dt).ceil() as usize;
        for _ in 0..steps {
            rk.step(&op, e0, &mut psi, 1e-3 / steps as f64);
        }
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-9, "N = {n}: drift {}", norm - 1.0);
    }
    let n = 300;
    let s = SpinState::coherent(n, FRAC_PI_2, PI).unwrap();
    let op = build_hamiltonian(&params, n);
    let e0 = op.expectation(s.amplitudes()).re;
    let out = evolve(&s, &params, 0.05, None).unwrap();
    let e1 = op.expectation(out.amplitudes()).re;
    let scale = op.inf_norm();
    assert!((e1 - e0).abs() < 1e-8 * scale, "{e0} {e1}");
}

#[test]
fn oat_variance_matches_closed_form() {
    // Kitagawa–Ueda minimal variance for |J = N/2, −x⟩ under χJz²
    let n = 20;
    let j = n as f64 / 2.0;
    for chi_t in [0.01, 0.03, 0.06, 0.1] {
        let params = PhysicalParams::constant(1.0, 0.0, 0.0);
        let s = evolve(&SpinState::coherent(n, FRAC_PI_2, PI).unwrap(), &params, chi_t, None).unwrap();
        let r = analysis::tomography_from_moments(&s.moments(), &half_turn_grid(0.0, 90)).unwrap();
        let mu = 2.0 * chi_t;
        let a = 1.0 - (mu / 1.0).cos().powf(2.0 * j - 2.0);
        let b = 4.0 * (mu / 2.0).sin() * (mu / 2.0).cos().powf(2.0 * j - 2.0);
        let v_min = j / 2.0 * (1.0 + 0.25 * (2.0 * j - 1.0) * (a - (a * a + b * b).sqrt()));
        let got = r.analytic.unwrap().var_min;
        assert!((got - v_min).abs() / v_min < 1e-6, "χt = {chi_t}: {got} vs {v_min}");
    }
}

#[test]
fn echo_is_neutral_without_detuning() {
    let n = 500;
    let params = PhysicalParams::ideal_default();
    let t = 0.015;
    let base = pipeline::ideal_sweep(&Protocol::new(params, n, false, PulseMode::Instant), n, &[t], None).unwrap()[0];
    let echo = pipeline::ideal_sweep(&Protocol::new(params, n, true, PulseMode::Instant), n, &[t], None).unwrap()[0];
    let rabi = TAU * 340.0;
    let finite = pipeline::ideal_sweep(&Protocol::new(params, n, true, PulseMode::Finite { prep_rabi: rabi, echo_rabi: rabi }), n, &[t], None).unwrap()[0];
    let d_instant = (base.xi2_s_db().unwrap() - echo.xi2_s_db().unwrap()).abs();
    let d_finite = (base.xi2_s_db().unwrap() - finite.xi2_s_db().unwrap()).abs();
    assert!(d_instant < 0.1, "instant echo changes ξ²_S by {d_instant} dB");
    // finite pulses act under the nonlinearity for ≈ 2.2 ms in total
    assert!(d_finite < 0.5, "finite-pulse echo changes ξ²_S by {d_finite} dB");
}

#[test]
fn twist_and_turn_beats_one_axis_twisting() {
    let n = 500;
    let times: Vec<f64> = (1..=20).map(|i| i as f64 * 1e-3).collect();
    let params = PhysicalParams::experiment_default().with_omega(TAU * 19.0);
    let params = PhysicalParams { chi: ChiLaw::FixedProduct { n_chi: TAU * 30.0 }, delta_ext: 0.0, delta_coeff: 0.0, ..params };
    let tnt = pipeline::ideal_sweep(&Protocol::new(params, n, false, PulseMode::Instant), n, &times, None).unwrap();
    let oat = pipeline::ideal_sweep(&Protocol::new(params.one_axis_twisting(), n, false, PulseMode::Instant), n, &times, None).unwrap();
    let better = tnt.iter().zip(&oat).filter(|(a, b)| a.xi2_s.unwrap() < b.xi2_s.unwrap()).count();
    assert!(better > 0);
    let i = 14; // 15 ms
    assert!(tnt[i].xi2_s_db().unwrap() < oat[i].xi2_s_db().unwrap() - 1.0);
}

#[test]
fn finite_sequence_runs_from_pole() {
    let n = 200;
    let rabi = TAU * 340.0;
    let proto = Protocol::new(PhysicalParams::experiment_default(), n, true, PulseMode::Finite { prep_rabi: rabi, echo_rabi: rabi });
    let s = run_sequence(&proto.initial_state(n).unwrap(), &proto.sequence(0.01).unwrap(), None).unwrap();
    assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    assert!(2.0 * s.moments().mean_length() / n as f64 > 0.5);
}
