use approx::assert_relative_eq;
use proptest::prelude::*;

use nullctl_core::weights::{source_schedule, validate, Violation, WeightParams, Weights};

/// Log-weights straight from their definitions, with `q = Q^{s/2}`.
struct Closed(WeightParams);

impl Closed {
    fn q(&self) -> f64 {
        self.0.big_q.powf(self.0.s / 2.0)
    }

    fn ln_rho0(&self, t: f64) -> f64 {
        let p = &self.0;
        -p.big_p * p.m_cost.ln() - p.m_cost * p.big_p / ((self.q() - 1.0) * (p.horizon - t))
    }

    fn ln_rho(&self, t: f64) -> f64 {
        let p = &self.0;
        let qs = p.big_q.powf(p.s);
        -(1.0 + p.big_p) * p.m_cost.ln() - (1.0 + p.big_p) * qs * p.m_cost / ((self.q() - 1.0) * (p.horizon - t))
    }

    fn ln_rho_hat(&self, t: f64) -> f64 {
        let p = &self.0;
        -p.m_cost * p.zeta / ((self.q() - 1.0) * (p.horizon - t))
    }
}

fn defaults() -> Weights {
    Weights::new(WeightParams::default()).unwrap()
}

#[test]
fn validation_examples() {
    assert!(validate(&WeightParams::default()).is_empty());
    let v = validate(&WeightParams {
        s: 1.0,
        ..WeightParams::default()
    });
    assert!(v.iter().any(|x| matches!(x, Violation::SNotAboveOne { .. })));
    let v = validate(&WeightParams {
        zeta: 3.5,
        ..WeightParams::default()
    });
    assert!(v.iter().any(|x| matches!(x, Violation::ZetaOutOfWindow { .. })));
    let v = validate(&WeightParams {
        zeta: 2.0,
        ..WeightParams::default()
    });
    assert!(v.iter().any(|x| matches!(x, Violation::ZetaOutOfWindow { .. })));
    let v = validate(&WeightParams {
        m_cost: 0.0,
        horizon: -1.0,
        ..WeightParams::default()
    });
    assert_eq!(v.len(), 2);
    assert!(Weights::new(WeightParams {
        big_q: 1.5,
        ..WeightParams::default()
    })
    .is_err());
}

#[test]
fn gamma_example() {
    assert_relative_eq!(defaults().gamma(1.0).unwrap(), 742.0658, epsilon = 1e-4);
}

#[test]
fn schedule_examples() {
    let t = source_schedule(1.0, 1.2, 2.0, 2).unwrap();
    assert_eq!(t[0], 0.0);
    assert_relative_eq!(t[1], 0.16667, epsilon = 1e-5);
    assert_relative_eq!(t[2], 0.30556, epsilon = 1e-5);
    assert_eq!(defaults().schedule(2), t);
    assert!(source_schedule(1.0, 1.0, 2.0, 2).is_err());
}

#[test]
fn schedule_gaps_shrink_and_accumulate_at_horizon() {
    let w = defaults();
    let t = w.schedule(20);
    for k in 0..19 {
        assert!(t[k + 2] - t[k + 1] < t[k + 1] - t[k], "k = {k}");
    }
    assert!(t[20] < 1.0);
    assert_relative_eq!(1.0 - t[20], w.remaining_at(20), max_relative = 1e-12);
}

#[test]
fn log_weights_match_closed_form() {
    let w = defaults();
    let c = Closed(WeightParams::default());
    for i in 0..100 {
        let t = 0.999 * i as f64 / 100.0;
        assert_relative_eq!(w.ln_rho0(t).unwrap(), c.ln_rho0(t), max_relative = 1e-13);
        assert_relative_eq!(w.ln_rho(t).unwrap(), c.ln_rho(t), max_relative = 1e-13);
        assert_relative_eq!(w.ln_rho_hat(t).unwrap(), c.ln_rho_hat(t), max_relative = 1e-13);
    }
}

#[test]
fn block_relation_for_defaults() {
    let w = defaults();
    let c = Closed(WeightParams::default());
    let q = c.q();
    for k in 0..=10 {
        assert!(w.relation_defect(k) < 1e-12, "k = {k}");
        // the same identity in log form from the closed-form weights
        let tk = 1.0 - q.powi(-(k as i32));
        let tk2 = 1.0 - q.powi(-(k as i32 + 2));
        let gap = q.powi(-(k as i32 + 2)) * (q - 1.0);
        let lhs = c.ln_rho0(tk2);
        let rhs = c.ln_rho(tk) + 5f64.ln() + 5.0 / gap;
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs(), "k = {k}");
    }
}

#[test]
fn weights_decrease_towards_horizon() {
    let w = defaults();
    let mut prev = [f64::INFINITY; 3];
    for i in 0..200 {
        let t = 0.99 * i as f64 / 200.0;
        let cur = [w.ln_rho0(t).unwrap(), w.ln_rho(t).unwrap(), w.ln_rho_hat(t).unwrap()];
        for j in 0..3 {
            assert!(cur[j] < prev[j]);
        }
        prev = cur;
    }
    assert_eq!(w.rho0(1.0 - 1e-4).unwrap(), 0.0);
    assert!(w.rho0(1.0).is_err());
}

#[test]
fn domination_ratios_stay_bounded() {
    let w = defaults();
    let s = WeightParams::default().s;
    let mut sup = 0f64;
    for i in 0..10_000 {
        let t = i as f64 / 10_000.0;
        let r0 = w.ln_rho0(t).unwrap();
        let r = w.ln_rho(t).unwrap();
        let h = w.ln_rho_hat(t).unwrap();
        let slope = w.ln_rho_hat_slope(t).unwrap();
        for ln in [r0 - h, r - h, slope + r0 - 2.0 * h, s * h - r] {
            sup = sup.max(ln.exp());
        }
    }
    assert!(sup.is_finite() && sup < 1e6, "sup = {sup}");
}

#[test]
fn slope_matches_finite_difference() {
    let w = defaults();
    for &t in &[0.1, 0.5, 0.9] {
        let h = 1e-6;
        let fd = (w.rho_hat(t + h).unwrap() - w.rho_hat(t - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(-fd, w.ln_rho_hat_slope(t).unwrap().exp(), max_relative = 1e-6);
    }
}

fn admissible() -> impl Strategy<Value = WeightParams> {
    (
        1.2f64..3.0,
        0.05f64..0.95,
        0.05f64..3.0,
        0.05f64..0.95,
        1.0f64..20.0,
        0.5f64..4.0,
    )
        .prop_map(|(s, uq, up, uz, m_cost, horizon)| {
            let big_q = 1.0 + uq * (2f64.powf(1.0 / s) - 1.0);
            let qs = big_q.powf(s);
            let big_p = qs / (2.0 - qs) + up;
            let lo = (1.0 + big_p) * qs / 2.0;
            let zeta = lo + uz * (big_p - lo);
            WeightParams {
                s,
                big_q,
                big_p,
                zeta,
                m_cost,
                horizon,
            }
        })
}

proptest! {
    #[test]
    fn admissible_parameters_validate(p in admissible()) {
        prop_assert!(validate(&p).is_empty());
    }

    #[test]
    fn block_relation_in_log_space(p in admissible(), k in 0usize..6) {
        let w = Weights::new(p).unwrap();
        let c = Closed(p);
        let q = c.q();
        let r = |j: usize| p.horizon / q.powi(j as i32);
        let gap = r(k + 2) * (q - 1.0);
        let lhs = w.ln_rho0_remaining(r(k + 2));
        let rhs = w.ln_rho_remaining(r(k)) + w.ln_gamma(gap).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn rho_dominates_rho0_near_horizon(p in admissible()) {
        // M ≥ 1 and (1+P)Q^s > P put ρ below ρ₀
        let w = Weights::new(p).unwrap();
        let t = 0.5 * p.horizon;
        prop_assert!(w.ln_rho(t).unwrap() <= w.ln_rho0(t).unwrap());
    }
}
