//! Time weights for sources and trajectories that must vanish at `T`.
//!
//! With `q = Q^{s/2}` and `r = T − t` the remaining time,
//!
//! ```text
//! γ(t)  = M e^{M/t}
//! ρ₀(t) = M^{−P} exp(−MP / ((q−1) r))
//! ρ(t)  = M^{−1−P} exp(−(1+P) Q^s M / ((q−1) r))
//! ρ̂(t)  = exp(−Mζ / ((q−1) r))
//! ```
//!
//! All weights are evaluated in log space; the `*_value` functions clamp
//! results below [`UNDERFLOW`] to exactly zero. Quantities such as `y/ρ̂` are
//! formed as `exp(ln‖y‖ − ln ρ̂)` and never by dividing small numbers.

use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Weights below this value are treated as exactly zero.
pub const UNDERFLOW: f64 = 1e-300;
pub const DEFAULT_M_COST: f64 = 5.0;
/// Guard band `T/GUARD_DIVISOR` before `T` excluded from weighted norms.
pub const GUARD_DIVISOR: f64 = 1024.0;

/// Parameters of the weight family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    /// `s = min(p, q + 1, r)`.
    pub s: f64,
    pub big_q: f64,
    pub big_p: f64,
    pub zeta: f64,
    pub m_cost: f64,
    pub horizon: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            s: 2.0,
            big_q: 1.2,
            big_p: 3.0,
            zeta: 2.9,
            m_cost: DEFAULT_M_COST,
            horizon: 1.0,
        }
    }
}

/// A violated parameter constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    SNotAboveOne { s: f64 },
    QOutOfRange { q: f64, upper: f64 },
    PTooSmall { p: f64, lower: f64 },
    ZetaOutOfWindow { zeta: f64, lower: f64, upper: f64 },
    NonPositiveCost { m: f64 },
    NonPositiveHorizon { t: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::SNotAboveOne { s } => write!(f, "s = {s} must exceed 1"),
            Violation::QOutOfRange { q, upper } => write!(f, "Q = {q} must lie in (1, {upper})"),
            Violation::PTooSmall { p, lower } => write!(f, "P = {p} must exceed Q^s/(2 − Q^s) = {lower}"),
            Violation::ZetaOutOfWindow { zeta, lower, upper } => {
                write!(f, "ζ = {zeta} must lie in ((1+P)Q^s/2, P) = ({lower}, {upper})")
            }
            Violation::NonPositiveCost { m } => write!(f, "M_cost = {m} must be positive"),
            Violation::NonPositiveHorizon { t } => write!(f, "T = {t} must be positive"),
        }
    }
}

/// Every violated constraint (empty when the parameters are admissible).
pub fn validate(params: &WeightParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let WeightParams {
        s,
        big_q,
        big_p,
        zeta,
        m_cost,
        horizon,
    } = *params;
    if !(s > 1.0) {
        out.push(Violation::SNotAboveOne { s });
    }
    let upper = 2f64.powf(1.0 / s);
    if !(big_q > 1.0 && big_q < upper) {
        out.push(Violation::QOutOfRange { q: big_q, upper });
    }
    let qs = big_q.powf(s);
    let lower_p = qs / (2.0 - qs);
    if !(qs < 2.0 && big_p > lower_p) {
        out.push(Violation::PTooSmall {
            p: big_p,
            lower: lower_p,
        });
    }
    let lower_z = (1.0 + big_p) * qs / 2.0;
    if !(zeta > lower_z && zeta < big_p) {
        out.push(Violation::ZetaOutOfWindow {
            zeta,
            lower: lower_z,
            upper: big_p,
        });
    }
    if !(m_cost > 0.0) {
        out.push(Violation::NonPositiveCost { m: m_cost });
    }
    if !(horizon > 0.0) {
        out.push(Violation::NonPositiveHorizon { t: horizon });
    }
    out
}

fn ensure_valid(params: &WeightParams) -> Result<()> {
    match validate(params).first() {
        None => Ok(()),
        Some(v) => Err(Error::invalid(alloc::format!("{v}"))),
    }
}

fn clamp(ln: f64) -> f64 {
    let v = ln.exp();
    if v < UNDERFLOW {
        0.0
    } else {
        v
    }
}

/// Precomputed weight family for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    params: WeightParams,
    ln_m: f64,
    // q − 1
    qm1: f64,
    qs: f64,
}

impl Weights {
    pub fn new(params: WeightParams) -> Result<Self> {
        ensure_valid(&params)?;
        let q = params.big_q.powf(params.s / 2.0);
        Ok(Self {
            params,
            ln_m: params.m_cost.ln(),
            qm1: q - 1.0,
            qs: params.big_q.powf(params.s),
        })
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    /// `q = Q^{s/2}`, the geometric ratio of the block schedule.
    pub fn ratio(&self) -> f64 {
        1.0 + self.qm1
    }

    /// `T/1024`.
    pub fn guard(&self) -> f64 {
        self.params.horizon / GUARD_DIVISOR
    }

    fn remaining(&self, t: f64) -> Result<f64> {
        let r = self.params.horizon - t;
        if !(t >= 0.0) || !(r > 0.0) {
            return Err(Error::invalid(alloc::format!(
                "weight evaluated at t = {t} outside [0, {})",
                self.params.horizon
            )));
        }
        Ok(r)
    }

    /// `ln γ(t)`, `t > 0`.
    pub fn ln_gamma(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::invalid("γ needs t > 0"));
        }
        Ok(self.ln_m + self.params.m_cost / t)
    }

    /// `ln ρ₀` as a function of the remaining time `r = T − t`.
    pub fn ln_rho0_remaining(&self, r: f64) -> f64 {
        let p = &self.params;
        -p.big_p * self.ln_m - p.m_cost * p.big_p / (self.qm1 * r)
    }

    pub fn ln_rho_remaining(&self, r: f64) -> f64 {
        let p = &self.params;
        -(1.0 + p.big_p) * self.ln_m - (1.0 + p.big_p) * self.qs * p.m_cost / (self.qm1 * r)
    }

    pub fn ln_rho_hat_remaining(&self, r: f64) -> f64 {
        let p = &self.params;
        -p.m_cost * p.zeta / (self.qm1 * r)
    }

    pub fn ln_rho0(&self, t: f64) -> Result<f64> {
        Ok(self.ln_rho0_remaining(self.remaining(t)?))
    }

    pub fn ln_rho(&self, t: f64) -> Result<f64> {
        Ok(self.ln_rho_remaining(self.remaining(t)?))
    }

    pub fn ln_rho_hat(&self, t: f64) -> Result<f64> {
        Ok(self.ln_rho_hat_remaining(self.remaining(t)?))
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        Ok(self.ln_gamma(t)?.exp())
    }

    pub fn rho0(&self, t: f64) -> Result<f64> {
        Ok(clamp(self.ln_rho0(t)?))
    }

    pub fn rho(&self, t: f64) -> Result<f64> {
        Ok(clamp(self.ln_rho(t)?))
    }

    pub fn rho_hat(&self, t: f64) -> Result<f64> {
        Ok(clamp(self.ln_rho_hat(t)?))
    }

    /// `ln ρ̂′(t) = ln ρ̂(t) + ln(Mζ/((q−1) r²))`; `ρ̂` is decreasing, so this
    /// is the log of `|ρ̂′|`.
    pub fn ln_rho_hat_slope(&self, t: f64) -> Result<f64> {
        let r = self.remaining(t)?;
        let p = &self.params;
        Ok(self.ln_rho_hat_remaining(r) + (p.m_cost * p.zeta / (self.qm1 * r * r)).ln())
    }

    /// `T_k = T − T/q^k` for `k = 0..=k_max`.
    pub fn schedule(&self, k_max: usize) -> Vec<f64> {
        source_schedule_unchecked(self.params.horizon, self.ratio(), k_max)
    }

    /// `T/q^k`, the remaining time at `T_k`, computed without cancellation.
    pub fn remaining_at(&self, k: usize) -> f64 {
        self.params.horizon / self.ratio().powi(k as i32)
    }

    /// `|expm1(ln ρ₀(T_{k+2}) − ln ρ(T_k) − ln γ(T_{k+2} − T_{k+1}))|`, the
    /// relative defect of the block relation between the weights.
    pub fn relation_defect(&self, k: usize) -> f64 {
        let q = self.ratio();
        let r = |j: usize| self.params.horizon / q.powi(j as i32);
        // T_{k+2} − T_{k+1} without the cancellation of subtracting them
        let gap = r(k + 2) * (q - 1.0);
        let lhs = self.ln_rho0_remaining(r(k + 2));
        let rhs = self.ln_rho_remaining(r(k)) + self.ln_m + self.params.m_cost / gap;
        (lhs - rhs).exp_m1().abs()
    }
}

fn source_schedule_unchecked(horizon: f64, q: f64, k_max: usize) -> Vec<f64> {
    (0..=k_max).map(|k| horizon - horizon / q.powi(k as i32)).collect()
}

/// Block times `T_k = T − T/Q^{ks/2}`, `k = 0..=k_max`.
pub fn source_schedule(horizon: f64, big_q: f64, s: f64, k_max: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || !(big_q > 1.0) || !(s > 0.0) {
        return Err(Error::invalid("schedule needs T > 0, Q > 1, s > 0"));
    }
    Ok(source_schedule_unchecked(horizon, big_q.powf(s / 2.0), k_max))
}
