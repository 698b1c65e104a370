//! Truncated nonlinearities and the pathwise Picard iteration.
//!
//! `f(y, y_x) = α y^p + β y^q y_x (+ c·y)` and `g(y) = γ y^r` are evaluated
//! pseudospectrally: the state is synthesized on Gauss–Legendre nodes, the
//! products are formed pointwise and projected back onto the sine basis by
//! the same quadrature. With at least `(deg + 1)·n_modes`-ish nodes the
//! projection of polynomial nonlinearities is exact to roundoff, so no
//! modes above `n_modes` leak back (no aliasing).
//!
//! The truncation multiplies both by `φ_R(‖y‖_{X_t})`, where the running
//! norm only looks at `[0, t]`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::paths::BrownianPath;
use crate::sde::{scaled_norm, HeatModel, SampledSource, SourceKind, Trajectory, WeightedView};
use crate::source_method::{source_term_control, weighted_source_integral, SourceOutcome, SourcePlan};
use crate::spectral::{sobolev_norm, SpectralGrid};
use crate::weights::Weights;

/// Coefficients and exponents of the nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearitySpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// Extra linear drift `c·y` (the exponential change of variable used for
    /// Allen–Cahn type equations).
    pub linear_shift: f64,
}

impl NonlinearitySpec {
    /// `f = −y y_x`, `g = 0.1 y²`.
    pub fn burgers() -> Self {
        Self {
            alpha: 0.0,
            beta: -1.0,
            gamma: 0.1,
            p: 2.0,
            q: 1.0,
            r: 2.0,
            linear_shift: 0.0,
        }
    }

    /// `f = y − y³`, no diffusion nonlinearity.
    pub fn allen_cahn() -> Self {
        Self {
            alpha: -1.0,
            beta: 0.0,
            gamma: 0.0,
            p: 3.0,
            q: 1.0,
            r: 2.0,
            linear_shift: 1.0,
        }
    }

    /// All nonlinear terms off.
    pub fn linear() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            p: 2.0,
            q: 1.0,
            r: 2.0,
            linear_shift: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "burgers" => Some(Self::burgers()),
            "allen-cahn" => Some(Self::allen_cahn()),
            "linear" => Some(Self::linear()),
            _ => None,
        }
    }

    /// `s = min(p, q + 1, r)`.
    pub fn s(&self) -> f64 {
        self.p.min(self.q + 1.0).min(self.r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.p,
            self.q,
            self.r,
            self.linear_shift,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nonlinearity parameters"));
        }
        if !(self.p > 1.0) || !(self.q >= 1.0) || !(self.r > 1.0) {
            return Err(Error::invalid("need p > 1, q ≥ 1, r > 1"));
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 && self.linear_shift == 0.0
    }
}

/// `sign(y)|y|^e`, with plain powers for integer exponents.
fn odd_pow(y: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() < 64.0 {
        y.powi(e as i32)
    } else {
        y.signum() * y.abs().powf(e)
    }
}

/// Smooth cutoff `φ_R`: 1 below `R`, 0 above `2R`, cubic smoothstep between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationParams {
    pub radius: f64,
}

impl TruncationParams {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("truncation radius must be positive"));
        }
        Ok(Self { radius })
    }

    pub fn phi(&self, s: f64) -> f64 {
        let u = (s - self.radius) / self.radius;
        if !(u > 0.0) {
            // also catches NaN from 0/0, treated as inside
            if u.is_nan() {
                return 0.0;
            }
            1.0
        } else if u >= 1.0 {
            0.0
        } else {
            1.0 - u * u * (3.0 - 2.0 * u)
        }
    }

    /// `sup|φ_R′| = 1.5/R`.
    pub fn lipschitz(&self) -> f64 {
        1.5 / self.radius
    }
}

/// Gauss–Legendre nodes and weights on `[0, length]`.
pub fn gauss_legendre(n: usize, length: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * length * (1.0 - z);
        x[n - 1 - i] = 0.5 * length * (1.0 + z);
        w[i] = 0.5 * length * wi;
        w[n - 1 - i] = 0.5 * length * wi;
    }
    (x, w)
}

/// Pointwise evaluator of `f` and `g` in mode space.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    spec: NonlinearitySpec,
    n_modes: usize,
    weights: Vec<f64>,
    sines: Vec<f64>,
    cosines: Vec<f64>,
}

impl Nonlinearity {
    /// Quadrature with `4·n_modes + 32` nodes, enough for cubic products.
    pub fn new(grid: &SpectralGrid, spec: NonlinearitySpec) -> Result<Self> {
        spec.validate()?;
        let n_modes = grid.n_modes();
        let nq = 4 * n_modes + 32;
        let (x, weights) = gauss_legendre(nq, grid.length());
        let norm = (2.0 / grid.length()).sqrt();
        let mut sines = vec![0.0; nq * n_modes];
        let mut cosines = vec![0.0; nq * n_modes];
        for (i, &xi) in x.iter().enumerate() {
            for k in 0..n_modes {
                let w = (k + 1) as f64 * PI / grid.length();
                sines[i * n_modes + k] = norm * (w * xi).sin();
                cosines[i * n_modes + k] = norm * w * (w * xi).cos();
            }
        }
        Ok(Self {
            spec,
            n_modes,
            weights,
            sines,
            cosines,
        })
    }

    pub fn spec(&self) -> &NonlinearitySpec {
        &self.spec
    }

    fn project(&self, pointwise: impl Fn(f64, f64) -> f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.n_modes || out.len() != self.n_modes {
            return Err(Error::ShapeMismatch {
                expected: self.n_modes,
                got: y.len(),
            });
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let m = self.n_modes;
        for (i, &wi) in self.weights.iter().enumerate() {
            let s = &self.sines[i * m..(i + 1) * m];
            let c = &self.cosines[i * m..(i + 1) * m];
            let v: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let vx: f64 = c.iter().zip(y).map(|(a, b)| a * b).sum();
            let val = pointwise(v, vx);
            if !val.is_finite() {
                return Err(Error::NonFinite("nonlinearity"));
            }
            if val == 0.0 {
                continue;
            }
            for (o, &sk) in out.iter_mut().zip(s) {
                *o += wi * val * sk;
            }
        }
        Ok(())
    }

    pub fn eval_f_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let sp = self.spec;
        if sp.alpha == 0.0 && sp.beta == 0.0 {
            out.iter_mut().zip(y).for_each(|(o, v)| *o = sp.linear_shift * v);
            return Ok(());
        }
        self.project(
            |v, vx| {
                let mut r = 0.0;
                if sp.alpha != 0.0 {
                    r += sp.alpha * odd_pow(v, sp.p);
                }
                if sp.beta != 0.0 {
                    r += sp.beta * odd_pow(v, sp.q) * vx;
                }
                r
            },
            y,
            out,
        )?;
        if sp.linear_shift != 0.0 {
            out.iter_mut().zip(y).for_each(|(o, v)| *o += sp.linear_shift * v);
        }
        Ok(())
    }

    pub fn eval_g_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let sp = self.spec;
        if sp.gamma == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        self.project(|v, _| sp.gamma * odd_pow(v, sp.r), y, out)
    }

    pub fn eval_f(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_modes];
        self.eval_f_into(y, &mut out)?;
        Ok(out)
    }

    pub fn eval_g(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_modes];
        self.eval_g_into(y, &mut out)?;
        Ok(out)
    }
}

/// `sup_{s≤t} ‖y/ρ̂‖_{H¹₀} + (∫₀^t ‖y/ρ̂‖²_{H²})^{1/2}` accumulated node by node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningXNorm {
    dt: f64,
    sup: f64,
    integral: f64,
    prev: Option<f64>,
}

impl RunningXNorm {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            sup: 0.0,
            integral: 0.0,
            prev: None,
        }
    }

    /// Add the next node's weighted H¹₀ and H² norms (not squared).
    pub fn push(&mut self, h1: f64, h2: f64) {
        self.sup = self.sup.max(h1);
        let sq = h2 * h2;
        if let Some(p) = self.prev {
            self.integral += 0.5 * self.dt * (p + sq);
        }
        self.prev = Some(sq);
    }

    pub fn value(&self) -> f64 {
        self.sup + self.integral.sqrt()
    }
}

/// `‖y‖_{X_t}` from a cached weighted view (nodes with time ≤ `t`).
pub fn x_norm(view: &WeightedView, t: f64) -> f64 {
    let dt = if view.times.len() > 1 {
        view.times[1] - view.times[0]
    } else {
        0.0
    };
    let mut run = RunningXNorm::new(dt);
    for (i, &ti) in view.times.iter().enumerate() {
        if ti > t + 1e-12 {
            break;
        }
        run.push(view.h1[i], view.h2[i]);
    }
    run.value()
}

/// Running `X_t` norm at every node of a trajectory; frozen after `T − t_guard`.
pub fn x_norm_profile(model: &HeatModel, weights: &Weights, traj: &Trajectory, guard_node: usize) -> Result<Vec<f64>> {
    let eig = model.eigenvalues();
    let dt = if traj.len() > 1 {
        traj.times()[1] - traj.times()[0]
    } else {
        0.0
    };
    let mut run = RunningXNorm::new(dt);
    let mut out = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let node = traj.start_node() + i;
        if node <= guard_node {
            let lh = weights.ln_rho_hat(traj.times()[i])?;
            let y = traj.state(i);
            run.push(
                scaled_norm(sobolev_norm(eig, y, 1), lh),
                scaled_norm(sobolev_norm(eig, y, 2), lh),
            );
        }
        out.push(run.value());
    }
    Ok(out)
}

/// Sources `F = φ_R(X_t) f(y)`, `G = φ_R(X_t) g(y)` on every node.
pub fn truncated_sources(
    model: &HeatModel,
    weights: &Weights,
    nonlin: &Nonlinearity,
    trunc: &TruncationParams,
    traj: &Trajectory,
    guard_node: usize,
) -> Result<(SampledSource, SampledSource, Vec<f64>)> {
    let n_modes = model.n_modes();
    let profile = x_norm_profile(model, weights, traj, guard_node)?;
    let mut f = SampledSource::zeros(SourceKind::Drift, traj.len(), n_modes);
    let mut g = SampledSource::zeros(SourceKind::Diffusion, traj.len(), n_modes);
    for i in 0..traj.len() {
        let y = traj.state(i);
        let cut = trunc.phi(profile[i]);
        if cut == 0.0 || y.iter().all(|&v| v == 0.0) {
            continue;
        }
        nonlin.eval_f_into(y, f.row_mut(i))?;
        nonlin.eval_g_into(y, g.row_mut(i))?;
        if cut != 1.0 {
            f.row_mut(i).iter_mut().for_each(|v| *v *= cut);
            g.row_mut(i).iter_mut().for_each(|v| *v *= cut);
        }
    }
    Ok((f, g, profile))
}

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Relative tolerance on the weighted source distance.
    pub tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub f: SampledSource,
    pub g: SampledSource,
    pub solution: SourceOutcome,
    pub iterations: usize,
    /// `d_{m+1}/d_m` for consecutive weighted source distances (not squared).
    pub ratios: Vec<f64>,
    pub distances: Vec<f64>,
    pub x_norm_t: f64,
    pub truncation_active: bool,
}

impl PicardOutcome {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().cloned().fold(0.0, f64::max)
    }
}

/// `(∫‖F/ρ‖² + ∫‖G/ρ‖²_{H¹})^{1/2}`, rescaled first so tiny sources do not
/// underflow when squared.
fn weighted_distance(
    model: &HeatModel,
    plan: &SourcePlan,
    path: &BrownianPath,
    f: &SampledSource,
    g: &SampledSource,
) -> Result<f64> {
    let peak = f.values().iter().chain(g.values()).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(0.0);
    }
    let (fs, gs) = (f.scaled(1.0 / peak), g.scaled(1.0 / peak));
    let sq =
        weighted_source_integral(model, plan, &fs, path, 0)? + weighted_source_integral(model, plan, &gs, path, 1)?;
    Ok(peak * sq.sqrt())
}

/// Pathwise fixed point `F = f_R(y(F, G))`, `G = g_R(y(F, G))`.
#[allow(clippy::too_many_arguments)]
pub fn picard_iterate(
    model: &HeatModel,
    y0: &[f64],
    path: &BrownianPath,
    nonlin: &Nonlinearity,
    trunc: &TruncationParams,
    plan: &SourcePlan,
    config: &PicardConfig,
) -> Result<PicardOutcome> {
    let n_nodes = plan.n_steps() + 1;
    let n_modes = model.n_modes();
    let weights = plan.weights();
    let guard = plan.guard_node();
    let mut f = SampledSource::zeros(SourceKind::Drift, n_nodes, n_modes);
    let mut g = SampledSource::zeros(SourceKind::Diffusion, n_nodes, n_modes);
    let mut ratios = Vec::new();
    let mut distances: Vec<f64> = Vec::new();
    let mut streak = 0usize;
    for it in 1..=config.max_iter.max(1) {
        let sol = source_term_control(model, y0, &f, &g, path, plan)?;
        let (f_next, g_next, profile) = truncated_sources(model, weights, nonlin, trunc, &sol.trajectory, guard)?;
        let d = weighted_distance(model, plan, path, &f_next.axpy(-1.0, &f), &g_next.axpy(-1.0, &g))?;
        let scale = weighted_distance(model, plan, path, &f_next, &g_next)?;
        if !d.is_finite() {
            return Err(Error::UnboundedSource(alloc::format!(
                "weighted source distance {d:e} at iteration {it}"
            )));
        }
        if let Some(&prev) = distances.last() {
            let ratio = if prev == 0.0 { 0.0 } else { d / prev };
            ratios.push(ratio);
            streak = if ratio >= 1.0 { streak + 1 } else { 0 };
            if streak >= 3 {
                let n = ratios.len();
                return Err(Error::Divergence {
                    ratios: [ratios[n - 3], ratios[n - 2], ratios[n - 1]],
                });
            }
        }
        distances.push(d);
        if d <= config.tol * scale {
            let x_norm_t = profile.last().copied().unwrap_or(0.0);
            return Ok(PicardOutcome {
                f,
                g,
                solution: sol,
                iterations: it,
                ratios,
                distances,
                x_norm_t,
                truncation_active: x_norm_t > trunc.radius,
            });
        }
        f = f_next;
        g = g_next;
    }
    Err(Error::MaxIterations(config.max_iter))
}

/// `‖(f_R(y₁) − f_R(y₂))(t)/ρ(t)‖ / ((R^{p−1} + R^q + R^{r−1})(‖y₁ − y₂‖_{X_t} + ‖(y₁ − y₂)(t)/ρ̂(t)‖_{H²}))`
/// at node `node` (0 when the denominator vanishes).
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe(
    model: &HeatModel,
    weights: &Weights,
    nonlin: &Nonlinearity,
    trunc: &TruncationParams,
    y1: &Trajectory,
    y2: &Trajectory,
    node: usize,
    guard_node: usize,
) -> Result<f64> {
    if y1.len() != y2.len() || y1.start_node() != y2.start_node() {
        return Err(Error::ShapeMismatch {
            expected: y1.len(),
            got: y2.len(),
        });
    }
    let i = node - y1.start_node();
    let t = y1.times()[i];
    let eig = model.eigenvalues();
    let diff = y1.axpy(-1.0, y2)?;
    let xd = x_norm_profile(model, weights, &diff, guard_node)?[i];
    let h2 = scaled_norm(sobolev_norm(eig, diff.state(i), 2), weights.ln_rho_hat(t)?);
    let sp = nonlin.spec();
    let r = trunc.radius;
    let denom = (r.powf(sp.p - 1.0) + r.powf(sp.q) + r.powf(sp.r - 1.0)) * (xd + h2);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let x1 = x_norm_profile(model, weights, y1, guard_node)?[i];
    let x2 = x_norm_profile(model, weights, y2, guard_node)?[i];
    let f1 = nonlin.eval_f(y1.state(i))?;
    let f2 = nonlin.eval_f(y2.state(i))?;
    let (c1, c2) = (trunc.phi(x1), trunc.phi(x2));
    let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| c1 * a - c2 * b).collect();
    let num = scaled_norm(sobolev_norm(eig, &df, 0), weights.ln_rho(t)?);
    Ok(num / denom)
}

/// `Ĉ² = Ê‖y‖²_{X_T} / Ê‖y0‖²_{H¹₀}` and the radius from the smallness policy.
pub fn estimate_c_and_r(x_norms: &[f64], y0_h1: &[f64], p: f64) -> Result<(f64, f64)> {
    if x_norms.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    if x_norms.len() != y0_h1.len() {
        return Err(Error::ShapeMismatch {
            expected: x_norms.len(),
            got: y0_h1.len(),
        });
    }
    let num: f64 = x_norms.iter().map(|x| x * x).sum();
    let den: f64 = y0_h1.iter().map(|x| x * x).sum();
    if !(den > 0.0) {
        return Err(Error::invalid("initial data must be nonzero"));
    }
    let c_sq = num / den;
    Ok((c_sq, crate::statlab::radius_policy(c_sq, p)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_profile() {
        let t = TruncationParams::new(2.0).unwrap();
        assert_eq!(t.phi(1.0), 1.0);
        assert_eq!(t.phi(2.0), 1.0);
        assert_eq!(t.phi(4.0), 0.0);
        assert!((t.phi(3.0) - 0.5).abs() < 1e-15);
        assert_eq!(t.phi(f64::INFINITY), 0.0);
        assert!((t.lipschitz() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7, 2.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(13)).sum();
        assert!((s - 2f64.powi(14) / 14.0).abs() < 1e-9);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn running_norm_constant_profile() {
        let mut r = RunningXNorm::new(0.5);
        for _ in 0..3 {
            r.push(PI, PI * PI);
        }
        assert!((r.value() - (PI + PI * PI)).abs() < 1e-12);
    }

    #[test]
    fn c_and_r() {
        let (c, r) = estimate_c_and_r(&[2.0, 4.0], &[1.0, 2.0], 2.0).unwrap();
        assert!((c - 4.0).abs() < 1e-15);
        assert!((r - 0.125f64.sqrt()).abs() < 1e-15);
        assert!(estimate_c_and_r(&[], &[], 2.0).is_err());
    }
}
