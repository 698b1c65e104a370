use approx::assert_relative_eq;

use nullctl_core::paths::sample_path;
use nullctl_core::sde::{solve_linear, FnSource, HeatModel, NoSource, SourceTerm, Window};
use nullctl_core::source_method::{
    control_block, solve_block_free, source_term_control, SourcePlan, SteeringMode, DEFAULT_MIN_BLOCK_STEPS,
};
use nullctl_core::spectral::{ControlRegion, SpectralGrid};
use nullctl_core::weights::{WeightParams, Weights};

const DT: f64 = 1.0 / 512.0;

fn model(a: f64) -> HeatModel {
    let grid = SpectralGrid::new(1.0, 16, 32).unwrap();
    HeatModel::new(grid, ControlRegion::default(), a).unwrap()
}

fn plan(m: &HeatModel, mode: SteeringMode) -> SourcePlan {
    let w = Weights::new(WeightParams::default()).unwrap();
    SourcePlan::new(m, w, mode, DT, DEFAULT_MIN_BLOCK_STEPS).unwrap()
}

fn y0() -> Vec<f64> {
    (1..=16).map(|k| 0.5 / (k * k) as f64).collect()
}

/// Sources proportional to `ρ`, so their weighted integrals stay finite.
fn decaying(weights: &Weights, mode: usize, amp: f64) -> impl Fn(usize, f64, &mut [f64]) + '_ {
    move |_n, t, out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[mode] = amp * weights.rho(t).unwrap_or(0.0);
    }
}

#[test]
fn block_layout_covers_the_grid() {
    let m = model(0.5);
    let p = plan(&m, SteeringMode::DirectHum);
    let blocks = p.blocks();
    assert_eq!(blocks[0].start, 0);
    assert_eq!(blocks.last().unwrap().end, p.n_steps());
    for pair in blocks.windows(2) {
        assert_eq!(pair[0].end, pair[1].start);
    }
    assert!(blocks.iter().all(|b| b.end - b.start >= DEFAULT_MIN_BLOCK_STEPS));
    assert!(p.guard_node() < p.n_steps());
    let w = Weights::new(WeightParams::default()).unwrap();
    assert!(SourcePlan::new(&m, w, SteeringMode::DirectHum, 0.25, DEFAULT_MIN_BLOCK_STEPS).is_err());
}

#[test]
fn zero_data_gives_zero_control() {
    let m = model(0.7);
    let p = plan(&m, SteeringMode::DirectHum);
    let path = sample_path(3, DT, 1.0).unwrap();
    let out = source_term_control(&m, &[0.0; 16], &NoSource, &NoSource, &path, &p).unwrap();
    assert!(out.control.coeffs().iter().all(|&v| v == 0.0));
    assert!(out.trajectory.states().all(|s| s.iter().all(|&v| v == 0.0)));
    assert_eq!(out.terminal_norm, 0.0);
    assert_eq!(out.certificate.ratio(), 0.0);
    let free = solve_block_free(&m, &NoSource, &NoSource, &path, 0, 40).unwrap();
    assert!(free.states().all(|s| s.iter().all(|&v| v == 0.0)));
    let (h, steer) = control_block(&m, &p, 0, &[0.0; 16], &path).unwrap();
    assert_eq!(h.cost(), 0.0);
    assert_eq!(steer.residual, 0.0);
}

#[test]
fn free_block_with_constant_drift() {
    let m = model(0.0);
    let path = sample_path(1, DT, 1.0).unwrap();
    let f = FnSource(|_n: usize, _t: f64, out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = 2.0;
    });
    let (s, e) = (64, 192);
    let free = solve_block_free(&m, &f, &NoSource, &path, s, e).unwrap();
    let lam = m.eigenvalues()[0];
    let len = (e - s) as f64 * DT;
    let exact = 2.0 * (1.0 - (-lam * len).exp()) / lam;
    assert_relative_eq!(free.terminal()[0], exact, max_relative = DT);
    assert!(free.terminal()[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn block_steering_is_quadratic_in_cost() {
    let m = model(0.5);
    let p = plan(&m, SteeringMode::DirectHum);
    let path = sample_path(8, DT, 1.0).unwrap();
    let a = y0();
    let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
    let (h1, s1) = control_block(&m, &p, 1, &a, &path).unwrap();
    let (h2, s2) = control_block(&m, &p, 1, &a2, &path).unwrap();
    assert!(s1.residual < 1e-6, "residual {}", s1.residual);
    assert_relative_eq!(h2.cost(), 4.0 * h1.cost(), max_relative = 1e-10);
    assert_relative_eq!(s2.cost, 4.0 * s1.cost, max_relative = 1e-10);
    let b = &p.blocks()[1];
    assert!(h1.is_zero_on(0, b.start));
    assert!(h1.is_zero_on(b.end, p.n_steps()));
    assert!(control_block(&m, &p, p.blocks().len(), &a, &path).is_err());
}

fn check_null_control(mode: SteeringMode, seed: u64) -> f64 {
    let m = model(0.8);
    let p = plan(&m, mode);
    let w = *p.weights();
    let f = FnSource(decaying(&w, 0, 1.0));
    let g = FnSource(decaying(&w, 1, 0.5));
    let path = sample_path(seed, DT, 1.0).unwrap();
    let y0 = y0();
    let out = source_term_control(&m, &y0, &f, &g, &path, &p).unwrap();
    let n0 = y0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(out.terminal_norm <= 1e-6 * n0, "terminal {}", out.terminal_norm);
    assert!(out.certificate.is_finite());
    assert!(out.certificate.ratio().is_finite());

    // re-solving with the glued control reproduces the glued trajectory
    let again = solve_linear(&m, &y0, Some(&out.control), &f, &g, &path, Window::full(&path)).unwrap();
    let scale = out.trajectory.states().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(
        again.max_abs_diff(&out.trajectory) <= 1e-6 * scale,
        "gluing gap {}",
        again.max_abs_diff(&out.trajectory)
    );
    out.control.cost()
}

#[test]
fn direct_steering_vanishes_at_horizon() {
    check_null_control(SteeringMode::DirectHum, 4);
}

#[test]
fn scheduled_steering_vanishes_at_horizon() {
    check_null_control(SteeringMode::Lr { m_spec: 10.0, k_max: 2 }, 4);
}

#[test]
fn sources_alone_are_controlled() {
    let m = model(0.3);
    let p = plan(&m, SteeringMode::DirectHum);
    let w = *p.weights();
    let f = FnSource(decaying(&w, 2, 3.0));
    assert!(!f.is_zero());
    let path = sample_path(12, DT, 1.0).unwrap();
    let out = source_term_control(&m, &[0.0; 16], &f, &NoSource, &path, &p).unwrap();
    assert!(out.control.cost() > 0.0);
    assert!(out.terminal_norm <= 1e-8);
    assert!(out.blocks.iter().all(|b| b.cost.is_finite()));
}

#[test]
fn plan_rejects_foreign_path() {
    let m = model(0.5);
    let p = plan(&m, SteeringMode::DirectHum);
    let path = sample_path(1, DT * 2.0, 1.0).unwrap();
    assert!(source_term_control(&m, &y0(), &NoSource, &NoSource, &path, &p).is_err());
}
