use proptest::prelude::*;

use nullctl_core::paths::{sample_path, sample_path_stream, step_count, BrownianPath};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[test]
fn single_increment_moments() {
    let t = 0.7;
    let w: Vec<f64> = (0..100_000)
        .map(|s| sample_path(s, t, t).unwrap().values()[1])
        .collect();
    let (m, v) = mean_var(&w);
    let n = w.len() as f64;
    assert!(m.abs() < 3.0 * (t / n).sqrt(), "mean {m}");
    // Var of the sample variance of a Gaussian is 2σ⁴/(n−1)
    assert!((v - t).abs() < 3.0 * (2.0 * t * t / (n - 1.0)).sqrt(), "variance {v}");
}

#[test]
fn terminal_mean_over_seeds() {
    let w: Vec<f64> = (0..100_000)
        .map(|s| *sample_path(s, 0.125, 1.0).unwrap().values().last().unwrap())
        .collect();
    let (m, _) = mean_var(&w);
    assert!(m.abs() < 3.0 * (1.0 / w.len() as f64).sqrt());
}

#[test]
fn bridge_midpoint_variance() {
    let dt = 0.5;
    let dev: Vec<f64> = (0..100_000)
        .map(|s| {
            let p = sample_path(s, dt, dt).unwrap().refine(2).unwrap();
            let v = p.values();
            v[1] - 0.5 * (v[0] + v[2])
        })
        .collect();
    let (m, v) = mean_var(&dev);
    let n = dev.len() as f64;
    let target = dt / 4.0;
    assert!(m.abs() < 3.0 * (target / n).sqrt());
    assert!(
        (v - target).abs() < 3.0 * (2.0 * target * target / (n - 1.0)).sqrt(),
        "variance {v}"
    );
}

#[test]
fn exponential_factor_is_a_martingale() {
    let a = 0.5;
    let e: Vec<f64> = (0..100_000)
        .map(|s| {
            let p = sample_path(s, 0.25, 1.0).unwrap();
            p.exp_factor(a, 1.0).unwrap()
        })
        .collect();
    let (m, v) = mean_var(&e);
    assert!((m - 1.0).abs() < 3.0 * (v / e.len() as f64).sqrt(), "mean {m}");
}

#[test]
fn exponential_factor_trivial_cases() {
    let p = sample_path(3, 1.0 / 32.0, 1.0).unwrap();
    assert_eq!(p.exp_factor(0.7, 0.0).unwrap(), 1.0);
    for n in 0..=p.n_steps() {
        assert_eq!(p.exp_factor_at(0.0, n), 1.0);
    }
    assert!(p.exp_factor(0.7, 0.01).is_err());
}

#[test]
fn quadratic_variation_converges() {
    let mut rel: Vec<f64> = (0..100)
        .map(|s| (sample_path(s, 1.0 / 4096.0, 1.0).unwrap().quadratic_variation() - 1.0).abs())
        .collect();
    rel.sort_by(f64::total_cmp);
    assert!(rel[50] <= 0.05, "median relative error {}", rel[50]);
}

#[test]
fn invalid_arguments() {
    assert!(sample_path(1, 0.0, 1.0).is_err());
    assert!(sample_path(1, 0.1, -1.0).is_err());
    assert!(sample_path(1, 0.3, 1.0).is_err());
    assert!(step_count(0.25, 1.0).unwrap() == 4);
    let p = sample_path(1, 0.25, 1.0).unwrap();
    assert!(p.refine(1).is_err());
    assert!(p.refine(3).is_err());
    assert!(p.subsample(3).is_err());
}

#[test]
fn streams_are_distinct_and_replayable() {
    let a = sample_path_stream(5, 0, 0.01, 1.0).unwrap();
    let b = sample_path_stream(5, 1, 0.01, 1.0).unwrap();
    assert_ne!(a.increments(), b.increments());
    let r = BrownianPath::from_increments(5, 0.01, 1.0, a.increments().to_vec()).unwrap();
    assert_eq!(r.values(), a.values());
}

#[test]
fn resample_keeps_the_past() {
    let p = sample_path(9, 1.0 / 64.0, 1.0).unwrap();
    let q = p.resample_after(20, 1234);
    assert_eq!(&p.values()[..=20], &q.values()[..=20]);
    assert_ne!(p.values()[21..], q.values()[21..]);
}

proptest! {
    #[test]
    fn determinism_and_prefix_sums(seed in any::<u64>(), k in 1usize..8) {
        let dt = 1.0 / (1 << k) as f64;
        let a = sample_path(seed, dt, 1.0).unwrap();
        let b = sample_path(seed, dt, 1.0).unwrap();
        prop_assert_eq!(a.increments(), b.increments());
        prop_assert_eq!(a.values()[0], 0.0);
        let mut w = 0.0;
        for (i, d) in a.increments().iter().enumerate() {
            w += d;
            prop_assert!((a.values()[i + 1] - w).abs() <= 1e-14);
        }
    }

    #[test]
    fn refine_then_subsample_is_identity(seed in any::<u64>(), lvl in 1u32..4) {
        let p = sample_path(seed, 1.0 / 16.0, 1.0).unwrap();
        let f = 1usize << lvl;
        let r = p.refine(f).unwrap();
        prop_assert_eq!(r.n_steps(), 16 * f);
        let back = r.subsample(f).unwrap();
        prop_assert_eq!(back.values(), p.values());
    }
}
