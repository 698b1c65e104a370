//! Monte-Carlo ensembles, exact binomial intervals and the Markov-bound
//! calibration of the initial-data radius.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::paths::{rng_for, sample_path_stream};
use crate::sde::HeatModel;
use crate::semilinear::{
    estimate_c_and_r, picard_iterate, Nonlinearity, NonlinearitySpec, PicardConfig, TruncationParams,
};
use crate::source_method::SourcePlan;
use crate::spectral::sobolev_norm;

/// Initial data are drawn on the span of this many lowest modes.
pub const INITIAL_MODES: usize = 8;
// Offsets the initial-data seed from the path seed.
const Y0_SALT: u64 = 0x5851_f42d_4c95_7f2d;
// Calibration members use their own seed so they never coincide with a run.
const CALIBRATION_SALT: u64 = 0x1405_7b7e_f767_814f;

/// `y ≈ intercept + slope·x` with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

/// Ordinary least squares on paired samples.
pub fn fit_affine(x: &[f64], y: &[f64]) -> Result<AffineFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("affine fit needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit data"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("affine fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(AffineFit { intercept, slope, r2 })
}

/// Linear-interpolation quantile of an already sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Median of an unsorted sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `P(X ≤ k)` for `X ~ Binomial(n, p)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut s = 0.0;
    for i in 0..=k {
        s += (ln_choose(n, i) + i as f64 * lp + (n - i) as f64 * lq).exp();
    }
    s.min(1.0)
}

// Root of a monotone function on [0, 1] by bisection.
fn bisect(mut lo: f64, mut hi: f64, increasing: bool, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided exact (Clopper–Pearson) interval for `k` successes in `n`
/// trials at confidence `1 − alpha`.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Empty("trials"));
    }
    if k > n {
        return Err(Error::invalid("successes exceed trials"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let half = 0.5 * alpha;
    let lower = if k == 0 {
        0.0
    } else if k == n {
        half.powf(1.0 / n as f64)
    } else {
        // P(X ≥ k; p) = half, increasing in p
        bisect(0.0, 1.0, true, |p| (1.0 - binomial_cdf(k - 1, n, p)) - half)
    };
    let upper = if k == n {
        1.0
    } else if k == 0 {
        1.0 - half.powf(1.0 / n as f64)
    } else {
        // P(X ≤ k; p) = half, decreasing in p
        bisect(0.0, 1.0, false, |p| binomial_cdf(k, n, p) - half)
    };
    Ok((lower, upper))
}

/// Predicted exceedance probability `Ĉ²δ²/R²`.
pub fn markov_bound(c_hat_sq: f64, delta: f64, radius: f64) -> f64 {
    c_hat_sq * delta * delta / (radius * radius)
}

/// Largest radius `δ = R√(ε/Ĉ²)` for which the Markov bound stays below `ε`.
pub fn calibrate_delta(c_hat_sq: f64, radius: f64, eps: f64) -> f64 {
    radius * (eps / c_hat_sq).sqrt()
}

/// Truncation radius `(0.5/Ĉ²)^{1/(2(p−1))}` meeting the smallness
/// condition `Ĉ² R^{2(p−1)} < 1` with a factor-two margin.
pub fn radius_policy(c_hat_sq: f64, p: f64) -> Result<f64> {
    if !(c_hat_sq > 0.0) || !(p > 1.0) {
        return Err(Error::invalid("radius policy needs Ĉ² > 0 and p > 1"));
    }
    Ok((0.5 / c_hat_sq).powf(1.0 / (2.0 * (p - 1.0))))
}

/// Ensemble size, seeding and the radii of the statistical check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub base_seed: u64,
    /// `‖y0‖_{H¹₀}` of every sampled initial state.
    pub delta: f64,
    pub radius: f64,
    pub eps: f64,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be at least 1"));
        }
        if !(self.delta >= 0.0) || !(self.radius > 0.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::invalid("need δ ≥ 0, R > 0 and ε in (0, 1)"));
        }
        Ok(())
    }
}

/// `δ·u` with `u` a uniformly random unit vector (in `H¹₀`) on the lowest
/// [`INITIAL_MODES`] modes; a pure function of `(seed, index)`.
pub fn sample_initial_state(seed: u64, index: u64, eigenvalues: &[f64], delta: f64) -> Vec<f64> {
    let mut rng = rng_for(seed ^ Y0_SALT, index);
    let m = INITIAL_MODES.min(eigenvalues.len());
    let mut y = alloc::vec![0.0; eigenvalues.len()];
    loop {
        for (k, v) in y.iter_mut().take(m).enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z / eigenvalues[k].sqrt();
        }
        let n = sobolev_norm(eigenvalues, &y, 1);
        if n > 0.0 {
            y.iter_mut().for_each(|v| *v *= delta / n);
            return y;
        }
    }
}

/// Everything a single ensemble member needs besides its index.
#[derive(Debug, Clone)]
pub struct PathSetup {
    pub model: HeatModel,
    pub nonlinearity: Nonlinearity,
    pub plan: SourcePlan,
    pub picard: PicardConfig,
}

/// Outcome of one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub path_id: u64,
    pub seed: u64,
    pub x_norm_t: f64,
    pub terminal_norm: f64,
    pub cost: f64,
    pub iterations: usize,
    pub truncation_active: bool,
    pub contraction_max: f64,
    pub y0_h1: f64,
}

/// Run the Picard pipeline for member `index`.
pub fn run_path(setup: &PathSetup, config: &EnsembleConfig, index: u64) -> Result<PathRecord> {
    let model = &setup.model;
    let horizon = setup.plan.weights().horizon();
    let path = sample_path_stream(config.base_seed, index, setup.plan.dt(), horizon)?;
    let y0 = sample_initial_state(config.base_seed, index, model.eigenvalues(), config.delta);
    let trunc = TruncationParams::new(config.radius)?;
    let out = picard_iterate(
        model,
        &y0,
        &path,
        &setup.nonlinearity,
        &trunc,
        &setup.plan,
        &setup.picard,
    )?;
    Ok(PathRecord {
        path_id: index,
        seed: config.base_seed,
        x_norm_t: out.x_norm_t,
        terminal_norm: out.solution.terminal_norm,
        cost: out.solution.control.cost(),
        iterations: out.iterations,
        truncation_active: out.truncation_active,
        contraction_max: out.max_ratio(),
        y0_h1: sobolev_norm(model.eigenvalues(), &y0, 1),
    })
}

/// Records and per-path failures, both ordered by path index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleResult {
    pub records: Vec<PathRecord>,
    pub failures: Vec<(u64, String)>,
}

impl EnsembleResult {
    /// Collect per-path results in index order.
    pub fn from_results(results: impl IntoIterator<Item = (u64, Result<PathRecord>)>) -> Self {
        let mut out = Self::default();
        for (i, r) in results {
            match r {
                Ok(rec) => out.records.push(rec),
                Err(e) => out.failures.push((i, e.to_string())),
            }
        }
        out.sort();
        out
    }

    fn sort(&mut self) {
        self.records.sort_by_key(|r| (r.seed, r.path_id));
        self.failures.sort_by_key(|f| f.0);
    }

    /// Union of two ensembles over disjoint indices or seeds.
    pub fn merge(mut self, other: EnsembleResult) -> Self {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
        self.sort();
        self
    }
}

/// Sequential ensemble over indices `0..n_paths`.
pub fn run_ensemble(setup: &PathSetup, config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    Ok(EnsembleResult::from_results(
        (0..config.n_paths as u64).map(|i| (i, run_path(setup, config, i))),
    ))
}

/// Fraction `p̂` of records with `x_norm_T ≤ R` and its exact 95% interval.
pub fn estimate_probability(records: &[PathRecord], radius: f64) -> Result<(f64, f64, f64)> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let n = records.len() as u64;
    let k = records.iter().filter(|r| r.x_norm_t <= radius).count() as u64;
    let (lo, hi) = clopper_pearson(k, n, 0.05)?;
    Ok((k as f64 / n as f64, lo, hi))
}

/// Aggregate statistics of an ensemble run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub eps_predicted: f64,
    pub c_hat_sq: f64,
    pub delta: f64,
    pub radius: f64,
    pub failures: usize,
    pub max_terminal_norm: f64,
}

impl EnsembleSummary {
    /// Upper confidence bound on the exceedance probability `P(‖y‖_{X_T} > R)`.
    pub fn exceedance_upper(&self) -> f64 {
        1.0 - self.ci_low
    }
}

/// Pure fold over the records; `c_hat_sq` comes from a calibration run.
pub fn summarize(result: &EnsembleResult, config: &EnsembleConfig, c_hat_sq: f64) -> Result<EnsembleSummary> {
    let (p_hat, ci_low, ci_high) = estimate_probability(&result.records, config.radius)?;
    Ok(EnsembleSummary {
        n_paths: result.records.len() + result.failures.len(),
        p_hat,
        ci_low,
        ci_high,
        eps_predicted: markov_bound(c_hat_sq, config.delta, config.radius),
        c_hat_sq,
        delta: config.delta,
        radius: config.radius,
        failures: result.failures.len(),
        max_terminal_norm: result.records.iter().map(|r| r.terminal_norm).fold(0.0, f64::max),
    })
}

/// Linear-regime calibration: `(Ĉ², R_policy)` from `n_paths` members run
/// with every nonlinear term switched off and no truncation.
pub fn calibrate(setup: &PathSetup, base_seed: u64, n_paths: usize, p: f64) -> Result<(f64, f64)> {
    let linear = PathSetup {
        nonlinearity: Nonlinearity::new(setup.model.grid(), NonlinearitySpec::linear())?,
        ..setup.clone()
    };
    let config = EnsembleConfig {
        n_paths,
        base_seed: base_seed ^ CALIBRATION_SALT,
        delta: 1.0,
        radius: f64::MAX,
        eps: 0.5,
    };
    let result = run_ensemble(&linear, &config)?;
    if let Some((i, e)) = result.failures.first() {
        return Err(Error::invalid(alloc::format!("calibration path {i} failed: {e}")));
    }
    let x: Vec<f64> = result.records.iter().map(|r| r.x_norm_t).collect();
    let y0: Vec<f64> = result.records.iter().map(|r| r.y0_h1).collect();
    estimate_c_and_r(&x, &y0, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_reference() {
        let (lo, hi) = clopper_pearson(95, 100, 0.05).unwrap();
        assert!((lo - 0.8872).abs() < 1e-3, "{lo}");
        assert!((hi - 0.9836).abs() < 1e-3, "{hi}");
        let (lo, hi) = clopper_pearson(10, 10, 0.05).unwrap();
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-14);
        assert_eq!(hi, 1.0);
        let (lo, _) = clopper_pearson(0, 10, 0.05).unwrap();
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn markov_and_calibration() {
        assert!((markov_bound(4.0, 0.05, 0.5) - 0.04).abs() < 1e-15);
        assert_eq!(markov_bound(4.0, 0.0, 0.5), 0.0);
        assert!((calibrate_delta(4.0, 0.5, 0.04) - 0.05).abs() < 1e-15);
        assert!((radius_policy(4.0, 2.0).unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
