//! Reproducible Brownian paths.
//!
//! Every path is a pure function of `(seed, stream, dt, T)`: the increments
//! come from a ChaCha8 stream keyed by the seed with the stream id selecting
//! an independent substream, so ensemble member `i` is the same no matter
//! which worker draws it or in what order.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

// Refinement levels draw from stream `stream + (level << LEVEL_SHIFT)`.
const LEVEL_SHIFT: u32 = 48;

/// A sampled Wiener path on the uniform grid `t_n = n·dt`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    stream: u64,
    level: u32,
    dt: f64,
    horizon: f64,
    increments: Vec<f64>,
    values: Vec<f64>,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of steps of size `dt` covering `[0, horizon]`.
pub fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt must be positive"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon must be positive"));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invalid(alloc::format!(
            "dt = {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

/// Path for `seed` on the default stream.
pub fn sample_path(seed: u64, dt: f64, horizon: f64) -> Result<BrownianPath> {
    sample_path_stream(seed, 0, dt, horizon)
}

/// Path for `(seed, stream)`; distinct streams are independent.
pub fn sample_path_stream(seed: u64, stream: u64, dt: f64, horizon: f64) -> Result<BrownianPath> {
    let n = step_count(dt, horizon)?;
    if stream >> LEVEL_SHIFT != 0 {
        return Err(Error::invalid("stream id must be below 2^48"));
    }
    let mut rng = rng_for(seed, stream);
    let sd = dt.sqrt();
    let increments: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    Ok(BrownianPath::assemble(seed, stream, 0, dt, horizon, increments))
}

impl BrownianPath {
    fn assemble(seed: u64, stream: u64, level: u32, dt: f64, horizon: f64, increments: Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut w = 0.0;
        values.push(w);
        for dw in &increments {
            w += dw;
            values.push(w);
        }
        Self {
            seed,
            stream,
            level,
            dt,
            horizon,
            increments,
            values,
        }
    }

    /// Rebuild a path from stored increments (replay of a dumped path).
    pub fn from_increments(seed: u64, dt: f64, horizon: f64, increments: Vec<f64>) -> Result<Self> {
        let n = step_count(dt, horizon)?;
        if increments.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: increments.len(),
            });
        }
        if increments.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("path increments"));
        }
        Ok(Self::assemble(seed, 0, 0, dt, horizon, increments))
    }

    /// Same path with the increments after node `from` replaced by a fresh
    /// draw keyed by `alt_seed`. Values on `[0, t_from]` are untouched.
    pub fn resample_after(&self, from: usize, alt_seed: u64) -> Self {
        let mut rng = rng_for(alt_seed, self.stream);
        let sd = self.dt.sqrt();
        let mut inc = self.increments.clone();
        for x in inc.iter_mut().skip(from) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = sd * z;
        }
        Self::assemble(self.seed, self.stream, self.level, self.dt, self.horizon, inc)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_n)` for `n = 0..=N`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps() {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    /// Node index of `t`, if `t` is a grid node.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let n = x.round();
        if n < 0.0 || n > self.n_steps() as f64 || (x - n).abs() > 1e-9 {
            return Err(Error::NotOnGrid { t });
        }
        Ok(n as usize)
    }

    /// Brownian-bridge refinement by a power-of-two `factor`.
    ///
    /// Coarse node values are kept exactly; each midpoint is drawn from
    /// `N((W_l + W_r)/2, h/4)` with `h` the current spacing.
    pub fn refine(&self, factor: usize) -> Result<BrownianPath> {
        if factor < 2 || !factor.is_power_of_two() {
            return Err(Error::invalid("refinement factor must be a power of two ≥ 2"));
        }
        let mut values = self.values.clone();
        let mut dt = self.dt;
        let mut level = self.level;
        for _ in 0..factor.trailing_zeros() {
            level += 1;
            let mut rng = rng_for(self.seed, self.stream + ((level as u64) << LEVEL_SHIFT));
            let sd = (dt / 4.0).sqrt();
            let mut next = Vec::with_capacity(2 * values.len() - 1);
            for pair in values.windows(2) {
                let z: f64 = StandardNormal.sample(&mut rng);
                next.push(pair[0]);
                next.push(0.5 * (pair[0] + pair[1]) + sd * z);
            }
            next.push(*values.last().unwrap());
            values = next;
            dt *= 0.5;
        }
        let increments = values.windows(2).map(|p| p[1] - p[0]).collect();
        Ok(BrownianPath {
            seed: self.seed,
            stream: self.stream,
            level,
            dt,
            horizon: self.horizon,
            increments,
            values,
        })
    }

    /// Every `factor`-th node of the path, as a coarser path.
    pub fn subsample(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(Error::invalid("subsampling factor must divide the step count"));
        }
        let values: Vec<f64> = self.values.iter().step_by(factor).copied().collect();
        let increments = values.windows(2).map(|p| p[1] - p[0]).collect();
        Ok(BrownianPath {
            seed: self.seed,
            stream: self.stream,
            level: self.level.saturating_sub(factor.trailing_zeros()),
            dt: self.dt * factor as f64,
            horizon: self.horizon,
            increments,
            values,
        })
    }

    /// `E(t_n) = exp(a W(t_n) − a² t_n / 2)`.
    pub fn exp_factor_at(&self, a: f64, n: usize) -> f64 {
        (a * self.values[n] - 0.5 * a * a * self.time(n)).exp()
    }

    /// `E(t)` at a grid node `t`.
    pub fn exp_factor(&self, a: f64, t: f64) -> Result<f64> {
        let n = self.node_index(t)?;
        Ok(self.exp_factor_at(a, n))
    }

    /// Per-step multiplicative factors `E(t_{n+1})/E(t_n) = exp(aΔW_n − a²Δt/2)`.
    pub fn step_factors(&self, a: f64) -> Vec<f64> {
        let c = -0.5 * a * a * self.dt;
        self.increments.iter().map(|dw| (a * dw + c).exp()).collect()
    }

    pub fn quadratic_variation(&self) -> f64 {
        self.increments.iter().map(|d| d * d).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_anchored() {
        let a = sample_path(7, 1.0 / 64.0, 1.0).unwrap();
        let b = sample_path(7, 1.0 / 64.0, 1.0).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_eq!(a.values()[0], 0.0);
        let mut w = 0.0;
        for (n, dw) in a.increments().iter().enumerate() {
            w += dw;
            assert!((a.values()[n + 1] - w).abs() <= 1e-14);
        }
        let c = sample_path_stream(7, 1, 1.0 / 64.0, 1.0).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(sample_path(1, 0.0, 1.0).is_err());
        assert!(sample_path(1, 0.1, -1.0).is_err());
        assert!(sample_path(1, 0.3, 1.0).is_err());
        assert!(sample_path(1, 0.1, 1.0).is_ok());
    }

    #[test]
    fn refine_keeps_coarse_nodes() {
        let p = sample_path(3, 0.125, 1.0).unwrap();
        let r = p.refine(4).unwrap();
        assert_eq!(r.n_steps(), 32);
        for n in 0..=8 {
            assert_eq!(r.values()[4 * n], p.values()[n]);
        }
        assert_eq!(r.subsample(4).unwrap().values(), p.values());
        // two halvings equal one refinement by four
        let rr = p.refine(2).unwrap().refine(2).unwrap();
        assert_eq!(rr.values(), r.values());
        assert!(p.refine(1).is_err());
        assert!(p.refine(3).is_err());
    }

    #[test]
    fn exp_factor_basics() {
        let p = sample_path(11, 0.25, 1.0).unwrap();
        for n in 0..=4 {
            assert_eq!(p.exp_factor_at(0.0, n), 1.0);
        }
        assert_eq!(p.exp_factor(0.7, 0.0).unwrap(), 1.0);
        assert!(p.exp_factor(0.7, 0.3).is_err());
        let e = p.exp_factor(0.7, 0.5).unwrap();
        assert!((e - (0.7 * p.values()[2] - 0.245 * 0.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn resample_after_preserves_prefix() {
        let p = sample_path(5, 1.0 / 32.0, 1.0).unwrap();
        let q = p.resample_after(10, 99);
        assert_eq!(&p.values()[..=10], &q.values()[..=10]);
        assert_ne!(p.values()[11], q.values()[11]);
    }
}
