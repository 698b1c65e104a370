use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use nullctl_core::lrcontrol::{
    build_lr_schedule, fit_cost_curve, hum_control, hum_gramian, lr_null_control, observability_constant,
    observability_curve, DiscreteHum, GramianFactor, LrPlan, DEFAULT_K_MAX, DEFAULT_M_SPEC,
};
use nullctl_core::paths::sample_path;
use nullctl_core::sde::{oracle_transform_solution, HeatModel, NoSource, Window};
use nullctl_core::spectral::{control_mass_matrix, ControlRegion, SpectralGrid};

fn simpson(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn model(n_modes: usize, a: f64) -> HeatModel {
    let grid = SpectralGrid::new(1.0, n_modes, 2 * n_modes).unwrap();
    HeatModel::new(grid, ControlRegion::default(), a).unwrap()
}

fn smooth_state(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| (k as f64).powi(-2) * if k % 2 == 0 { -1.0 } else { 1.0 })
        .collect()
}

#[test]
fn schedule_examples() {
    let s = build_lr_schedule(1.0, 10.0, 2).unwrap();
    assert_eq!(s.starts()[0], 0.0);
    assert_eq!(s.durations()[0], 0.25);
    assert_eq!(s.starts()[1], 0.5);
    assert_eq!(s.cutoffs(), &[10.0, 40.0, 160.0]);
    assert!(build_lr_schedule(1.0, 10.0, 0).is_err());
    assert!(build_lr_schedule(0.0, 10.0, 2).is_err());
    assert!(build_lr_schedule(1.0, -1.0, 2).is_err());
    let s = build_lr_schedule(2.0, DEFAULT_M_SPEC, DEFAULT_K_MAX).unwrap();
    let last = s.k_max();
    assert!(s.starts()[last] + s.durations()[last] < 2.0);
    for w in s.windows().collect::<Vec<_>>().windows(2) {
        // each passive gap equals the preceding active length
        assert_relative_eq!(w[1].start - w[0].start, 2.0 * w[0].duration, max_relative = 1e-15);
    }
}

#[test]
fn scalar_gramian_example() {
    let b = DMatrix::from_element(1, 1, 1.0);
    let g = hum_gramian(&[PI * PI], &b, 0.25).unwrap()[(0, 0)];
    assert_relative_eq!(
        g,
        (1.0 - (-PI * PI / 2.0).exp()) / (2.0 * PI * PI),
        max_relative = 1e-14
    );
    assert_relative_eq!(g, 0.0502962, epsilon = 1e-7);
}

#[test]
fn gramian_limits() {
    let b = control_mass_matrix(1.0, &ControlRegion::default(), 3);
    let eig: Vec<f64> = (1..=3).map(|k| (k as f64 * PI).powi(2)).collect();
    let long = hum_gramian(&eig, &b, 50.0).unwrap();
    let short = hum_gramian(&eig, &b, 1e-4).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_relative_eq!(long[(i, j)], b[(i, j)] / (eig[i] + eig[j]), max_relative = 1e-6);
            // relative gap is about (λ_i + λ_j)τ/2
            let tol = (eig[i] + eig[j]) * 1e-4;
            assert_relative_eq!(short[(i, j)], 1e-4 * b[(i, j)], max_relative = tol);
        }
    }
    assert_relative_eq!(short[(0, 0)], 1e-4 * b[(0, 0)], max_relative = 1e-3);
    assert!(hum_gramian(&eig, &b, 0.0).is_err());
}

#[test]
fn gramian_against_quadrature() {
    let b = control_mass_matrix(1.0, &ControlRegion::default(), 4);
    let eig: Vec<f64> = (1..=4).map(|k| (k as f64 * PI).powi(2)).collect();
    let tau = 0.3;
    let g = hum_gramian(&eig, &b, tau).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let q = simpson(20_000, 0.0, tau, |t| (-(eig[i] + eig[j]) * (tau - t)).exp()) * b[(i, j)];
            assert!((q - g[(i, j)]).abs() < 1e-12, "({i}, {j})");
        }
    }
}

#[test]
fn scalar_hum_cost_example() {
    let b = DMatrix::from_element(1, 1, 1.0);
    let lam = PI * PI;
    let h = hum_control(&[1.0], &[lam], &b, 0.25).unwrap();
    let g = (1.0 - (-lam / 2.0).exp()) / (2.0 * lam);
    assert_relative_eq!(h.cost, (-lam / 2.0).exp() / g, max_relative = 1e-12);
    assert_relative_eq!(h.cost, 0.142990, epsilon = 1e-6);
    let z = hum_control(&[0.0], &[lam], &b, 0.25).unwrap();
    assert_eq!(z.eta, vec![0.0]);
    assert_eq!(z.cost, 0.0);
    let two = hum_control(&[2.0], &[lam], &b, 0.25).unwrap();
    assert_relative_eq!(two.eta[0], 2.0 * h.eta[0], max_relative = 1e-14);
    assert_relative_eq!(two.cost, 4.0 * h.cost, max_relative = 1e-14);
}

/// `∫₀^τ e^{−Λ(τ−t)} B d(t) dt` by Simpson's rule.
fn steer_map(eig: &[f64], b: &DMatrix<f64>, tau: f64, d: &dyn Fn(f64, &mut [f64])) -> Vec<f64> {
    let m = eig.len();
    (0..m)
        .map(|i| {
            simpson(4000, 0.0, tau, |t| {
                let mut v = vec![0.0; m];
                d(t, &mut v);
                let bd: f64 = (0..m).map(|j| b[(i, j)] * v[j]).sum();
                (-eig[i] * (tau - t)).exp() * bd
            })
        })
        .collect()
}

fn b_inner(b: &DMatrix<f64>, tau: f64, u: &dyn Fn(f64, &mut [f64]), v: &dyn Fn(f64, &mut [f64]), m: usize) -> f64 {
    simpson(4000, 0.0, tau, |t| {
        let (mut x, mut y) = (vec![0.0; m], vec![0.0; m]);
        u(t, &mut x);
        v(t, &mut y);
        (0..m)
            .map(|i| (0..m).map(|j| x[i] * b[(i, j)] * y[j]).sum::<f64>())
            .sum()
    })
}

#[test]
fn hum_control_steers_and_is_optimal() {
    let m = 3;
    let b = control_mass_matrix(1.0, &ControlRegion::default(), m);
    let eig: Vec<f64> = (1..=m).map(|k| (k as f64 * PI).powi(2)).collect();
    let tau = 0.25;
    let x0 = [1.0, -0.5, 0.25];
    let h = hum_control(&x0, &eig, &b, tau).unwrap();
    let q = |t: f64, out: &mut [f64]| h.eval(t, out);
    let lq = steer_map(&eig, &b, tau, &q);
    for i in 0..m {
        let terminal = x0[i] * (-eig[i] * tau).exp() + lq[i];
        assert!(terminal.abs() < 1e-10, "mode {i}: {terminal}");
    }
    assert_relative_eq!(b_inner(&b, tau, &q, &q, m), h.cost, max_relative = 1e-8);

    // perturb inside the kernel of the steering map; the first variation vanishes
    let g = hum_gramian(&eig, &b, tau).unwrap();
    let ginv = g.clone().try_inverse().unwrap();
    let d = |t: f64, out: &mut [f64]| {
        for (k, o) in out.iter_mut().enumerate() {
            *o = ((k + 2) as f64 * 7.0 * t).cos() + t * k as f64;
        }
    };
    let ld = steer_map(&eig, &b, tau, &d);
    let c: Vec<f64> = (0..m).map(|i| (0..m).map(|j| ginv[(i, j)] * ld[j]).sum()).collect();
    let delta = |t: f64, out: &mut [f64]| {
        d(t, out);
        for k in 0..m {
            out[k] -= (-eig[k] * (tau - t)).exp() * c[k];
        }
    };
    let lk = steer_map(&eig, &b, tau, &delta);
    assert!(lk.iter().all(|v| v.abs() < 1e-10), "kernel residual {lk:?}");
    let cross = b_inner(&b, tau, &q, &delta, m);
    let dd = b_inner(&b, tau, &delta, &delta, m);
    assert!(cross.abs() < 1e-8 * (h.cost * dd).sqrt());
    for eps in [1e-3, 0.1, 1.0] {
        assert!(h.cost + 2.0 * eps * cross + eps * eps * dd >= h.cost - 1e-12);
    }
}

#[test]
fn scalar_observability_constant() {
    let b = DMatrix::from_element(1, 1, 1.0);
    let lam = PI * PI;
    for &tau in &[0.1, 0.25, 1.0] {
        let k = observability_constant(&[lam], &b, tau).unwrap();
        let e = (-2.0 * lam * tau).exp();
        assert_relative_eq!(k, 2.0 * lam * e / (1.0 - e), max_relative = 1e-12);
    }
}

#[test]
fn observability_decreases_with_horizon() {
    let m = model(8, 0.0);
    let b = m.mass().view((0, 0), (6, 6)).into_owned();
    let eig = &m.eigenvalues()[..6];
    let mut prev = f64::INFINITY;
    for &tau in &[0.05, 0.1, 0.2, 0.4] {
        let k = observability_constant(eig, &b, tau).unwrap();
        assert!(k < prev, "tau {tau}: {k} >= {prev}");
        prev = k;
    }
    let curve = observability_curve(&m, 0.1, 6).unwrap();
    assert_eq!(curve.kappa.len(), 6);
    assert!(observability_curve(&m, 0.1, 9).is_err());
}

#[test]
fn tikhonov_shift_only_when_ill_conditioned() {
    let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let f = GramianFactor::new(&good).unwrap();
    assert_eq!(f.shift(), 0.0);
    let x = f.solve(&[1.0, 1.0]);
    assert_relative_eq!(2.0 * x[0] + 0.5 * x[1], 1.0, max_relative = 1e-14);
    let hilbert = DMatrix::from_fn(12, 12, |i, j| 1.0 / (i + j + 1) as f64);
    let f = GramianFactor::new(&hilbert).unwrap();
    assert!(f.condition() > 1e12);
    assert!(f.shift() > 0.0);
    assert!(GramianFactor::new(&DMatrix::zeros(2, 2)).is_err());
}

#[test]
fn discrete_hum_reaches_zero() {
    let b = control_mass_matrix(1.0, &ControlRegion::default(), 4);
    let eig: Vec<f64> = (1..=4).map(|k| (k as f64 * PI).powi(2)).collect();
    let d = DiscreteHum::new(&eig, &b, 1.0 / 512.0, 128).unwrap();
    let x0 = [1.0, 2.0, -1.0, 0.5];
    let eta = d.steer(&x0);
    let end = d.terminal(&x0, &eta);
    assert!(end.iter().all(|v| v.abs() < 1e-10), "{end:?}");
    assert!(d.cost(&eta) > 0.0);
    assert!(DiscreteHum::new(&eig, &b, 1.0 / 512.0, 0).is_err());
}

#[test]
fn deterministic_null_control() {
    let m = model(32, 0.0);
    let path = sample_path(0, 1.0 / 1024.0, 1.0).unwrap();
    let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, DEFAULT_K_MAX).unwrap();
    let y0 = smooth_state(32);
    let out = lr_null_control(&m, &y0, &path, &s).unwrap();
    assert!(out.terminal_ratio_sq() <= 1e-6, "ratio {}", out.terminal_ratio_sq());
    let orc = oracle_transform_solution(
        &m,
        &y0,
        Some(&out.control),
        &NoSource,
        &NoSource,
        &path,
        Window::full(&path),
    )
    .unwrap();
    let n0: f64 = y0.iter().map(|v| v * v).sum();
    let nt: f64 = orc.terminal().iter().map(|v| v * v).sum();
    assert!(nt <= 1e-6 * n0, "oracle ratio {}", nt / n0);
}

#[test]
fn stochastic_null_control_windows() {
    let m = model(32, 1.0);
    let path = sample_path(5, 1.0 / 1024.0, 1.0).unwrap();
    let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, DEFAULT_K_MAX).unwrap();
    let y0 = smooth_state(32);
    let out = lr_null_control(&m, &y0, &path, &s).unwrap();
    assert!(out.terminal_ratio_sq() <= 1e-6);
    out.check_terminal(1e-3).unwrap();
    for w in &out.windows {
        if w.modes > 0 {
            // late windows steer many modes and may carry a Tikhonov shift
            assert!(w.residual <= 1e-6, "window {}: {}", w.index, w.residual);
        }
    }
    // passive intervals carry no control
    for pair in out.windows.windows(2) {
        assert!(out.control.is_zero_on(pair[0].end, pair[1].start));
    }
    let last = out.windows.last().unwrap();
    assert!(out.control.is_zero_on(last.end, path.n_steps()));
    let zero = lr_null_control(&m, &[0.0; 32], &path, &s).unwrap();
    assert!(zero.control.coeffs().iter().all(|&v| v == 0.0));
    assert_eq!(zero.terminal_norm, 0.0);
}

#[test]
fn plan_rejects_foreign_grid() {
    let m = model(8, 0.5);
    let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, 3).unwrap();
    let plan = LrPlan::new(&m, &s, 1.0 / 256.0).unwrap();
    let other = sample_path(1, 1.0 / 128.0, 1.0).unwrap();
    assert!(plan.run(&m, &[1.0; 8], &other).is_err());
    let short = sample_path(1, 1.0 / 256.0, 0.5).unwrap();
    assert!(lr_null_control(&m, &[1.0; 8], &short, &s).is_err());
}

#[test]
fn controls_are_adapted() {
    let m = model(16, 1.0);
    let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, 4).unwrap();
    let plan = LrPlan::new(&m, &s, 1.0 / 512.0).unwrap();
    let p = sample_path(21, 1.0 / 512.0, 1.0).unwrap();
    let cut = 300;
    let q = p.resample_after(cut, 77);
    let y0 = smooth_state(16);
    let a = plan.run(&m, &y0, &p).unwrap();
    let b = plan.run(&m, &y0, &q).unwrap();
    for n in 0..cut {
        assert_eq!(a.control.at(n), b.control.at(n), "step {n}");
    }
}

#[test]
fn cost_fit_recovers_exact_curve() {
    let c = 3.0f64;
    let hs = [0.25, 0.5, 1.0, 2.0];
    let costs: Vec<f64> = hs.iter().map(|t| c * (c / t).exp()).collect();
    let fit = fit_cost_curve(&hs, &costs).unwrap();
    assert_relative_eq!(fit.c0, c.ln(), max_relative = 1e-10);
    assert_relative_eq!(fit.c1, c, max_relative = 1e-10);
    assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    assert_relative_eq!(fit.m_cost, c, max_relative = 1e-10);
    assert!(fit_cost_curve(&hs[..2], &costs[..2]).is_err());
    assert!(fit_cost_curve(&hs, &[1.0, 0.0, 1.0, 1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn control_is_linear_in_the_data(
        y1 in prop::collection::vec(-1.0f64..1.0, 12),
        y2 in prop::collection::vec(-1.0f64..1.0, 12),
        c in -2.0f64..2.0,
        seed in 0u64..1000,
    ) {
        let m = model(12, 0.8);
        let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, 3).unwrap();
        let plan = LrPlan::new(&m, &s, 1.0 / 256.0).unwrap();
        let p = sample_path(seed, 1.0 / 256.0, 1.0).unwrap();
        let combo: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + c * b).collect();
        let h = plan.run(&m, &combo, &p).unwrap().control;
        let h1 = plan.run(&m, &y1, &p).unwrap().control;
        let h2 = plan.run(&m, &y2, &p).unwrap().control;
        let scale = h1.coeffs().iter().chain(h2.coeffs()).fold(1.0f64, |a, v| a.max(v.abs()));
        for ((x, a), b) in h.coeffs().iter().zip(h1.coeffs()).zip(h2.coeffs()) {
            prop_assert!((x - a - c * b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn control_scales_with_the_data(c in -5.0f64..5.0, seed in 0u64..1000) {
        let m = model(12, 0.8);
        let s = build_lr_schedule(1.0, DEFAULT_M_SPEC, 3).unwrap();
        let plan = LrPlan::new(&m, &s, 1.0 / 256.0).unwrap();
        let p = sample_path(seed, 1.0 / 256.0, 1.0).unwrap();
        let y0 = smooth_state(12);
        let scaled: Vec<f64> = y0.iter().map(|v| c * v).collect();
        let a = plan.run(&m, &y0, &p).unwrap();
        let b = plan.run(&m, &scaled, &p).unwrap();
        let scale = a.control.coeffs().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!(b.control.max_abs_diff(&a.control.scaled(c)) <= 1e-10 * scale * c.abs().max(1.0));
    }
}
