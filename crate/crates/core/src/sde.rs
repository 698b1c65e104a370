//! Pathwise time stepping of the controlled linear stochastic heat equation
//!
//! ```text
//! dy = (Δy + χ_{D₀} h + F) dt + (a y + G) dW
//! ```
//!
//! in the sine basis. The scheme is an exponential (integrating-factor)
//! Euler step: with `Φ_k = exp((−λ_k − a²/2)Δt + aΔW)` the exact solution
//! factor of the homogeneous mode equation,
//!
//! ```text
//! y_k ← Φ_k · ( y_k + Δt (B h)_k + Δt (F_k − a G_k) + G_k ΔW )
//! ```
//!
//! Sources are frozen at the left endpoint (Itô). Writing `ỹ = y / E(t)`,
//! `E(t) = exp(aW(t) − a²t/2)`, the step is the exponential Euler step of
//! the noise-free transformed equation, so a control of the form
//! `h(t_n) = E(t_n) q(t_n)` acts on `ỹ` through a deterministic linear map.
//! The control synthesis in [`crate::lrcontrol`] relies on that identity.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lrcontrol::ControlSignal;
use crate::paths::BrownianPath;
use crate::spectral::{sobolev_norm, ControlRegion, SpectralGrid};

/// Spectral grid, control region, mass matrix and noise coefficient.
#[derive(Debug, Clone)]
pub struct HeatModel {
    grid: SpectralGrid,
    region: ControlRegion,
    mass: DMatrix<f64>,
    a: f64,
}

impl HeatModel {
    pub fn new(grid: SpectralGrid, region: ControlRegion, a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFinite("noise coefficient"));
        }
        let mass = grid.control_mass_matrix(&region, grid.n_modes())?;
        Ok(Self { grid, region, mass, a })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn region(&self) -> &ControlRegion {
        &self.region
    }

    /// `B_kj = ∫_{D₀} φ_k φ_j`, full `n_modes × n_modes`.
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn n_modes(&self) -> usize {
        self.grid.n_modes()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.grid.eigenvalues()
    }

    /// Same model with a different noise coefficient.
    pub fn with_noise(&self, a: f64) -> Self {
        Self { a, ..self.clone() }
    }

    /// `out = B q` where `q` may be shorter than `n_modes` (restricted basis).
    pub fn apply_mass(&self, q: &[f64], out: &mut [f64]) {
        let n = self.n_modes();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &qj) in q.iter().enumerate() {
            if qj == 0.0 {
                continue;
            }
            let col = self.mass.column(j);
            for i in 0..n {
                out[i] += col[i] * qj;
            }
        }
    }

    /// `qᵀ B q`, the squared `L²(D₀)` norm of `Σ q_k φ_k` restricted to `D₀`.
    pub fn mass_form(&self, q: &[f64]) -> f64 {
        let m = q.len();
        let mut s = 0.0;
        for i in 0..m {
            if q[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..m {
                row += self.mass[(i, j)] * q[j];
            }
            s += q[i] * row;
        }
        s
    }
}

/// Drift (`F`) or diffusion (`G`) source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Drift,
    Diffusion,
}

/// Time-dependent source evaluated at path node `n` (time `t`).
pub trait SourceTerm {
    fn eval(&self, n: usize, t: f64, out: &mut [f64]);

    /// Sources that are identically zero may skip evaluation.
    fn is_zero(&self) -> bool {
        false
    }
}

/// The zero source.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSource;

impl SourceTerm for NoSource {
    fn eval(&self, _n: usize, _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Source tabulated at every path node `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSource {
    pub kind: SourceKind,
    n_modes: usize,
    values: Vec<f64>,
}

impl SampledSource {
    pub fn zeros(kind: SourceKind, n_nodes: usize, n_modes: usize) -> Self {
        Self {
            kind,
            n_modes,
            values: vec![0.0; n_nodes * n_modes],
        }
    }

    /// Tabulate `f(n, t, out)` on the nodes of `path`.
    pub fn tabulate(
        kind: SourceKind,
        path: &BrownianPath,
        n_modes: usize,
        mut f: impl FnMut(usize, f64, &mut [f64]),
    ) -> Self {
        let mut s = Self::zeros(kind, path.n_steps() + 1, n_modes);
        for n in 0..=path.n_steps() {
            f(n, path.time(n), s.row_mut(n));
        }
        s
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.n_modes
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_modes..(n + 1) * self.n_modes]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.values[n * self.n_modes..(n + 1) * self.n_modes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Pointwise `self + c·other`.
    pub fn axpy(&self, c: f64, other: &SampledSource) -> SampledSource {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        SampledSource {
            kind: self.kind,
            n_modes: self.n_modes,
            values,
        }
    }

    pub fn scaled(&self, c: f64) -> SampledSource {
        SampledSource {
            kind: self.kind,
            n_modes: self.n_modes,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

impl SourceTerm for SampledSource {
    fn eval(&self, n: usize, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(self.row(n));
    }

    fn is_zero(&self) -> bool {
        self.all_zero()
    }
}

/// Closure-backed source.
pub struct FnSource<F>(pub F);

impl<F: Fn(usize, f64, &mut [f64])> SourceTerm for FnSource<F> {
    fn eval(&self, n: usize, t: f64, out: &mut [f64]) {
        (self.0)(n, t, out)
    }
}

/// Stored solution on consecutive path nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: usize,
    times: Vec<f64>,
    n_modes: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn with_capacity(start: usize, n_modes: usize, n_nodes: usize) -> Self {
        Self {
            start,
            times: Vec::with_capacity(n_nodes),
            n_modes,
            states: Vec::with_capacity(n_nodes * n_modes),
        }
    }

    pub(crate) fn push(&mut self, t: f64, y: &[f64]) {
        debug_assert_eq!(y.len(), self.n_modes);
        self.times.push(t);
        self.states.extend_from_slice(y);
    }

    /// Zero trajectory on the nodes `start..=end` of `path`.
    pub fn zeros(path: &BrownianPath, start: usize, end: usize, n_modes: usize) -> Self {
        let times: Vec<f64> = (start..=end).map(|n| path.time(n)).collect();
        let len = times.len();
        Self {
            start,
            times,
            n_modes,
            states: vec![0.0; len * n_modes],
        }
    }

    /// Path node index of the first stored state.
    pub fn start_node(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// State at local index `i` (path node `start + i`).
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub(crate) fn state_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.states[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.n_modes)
    }

    /// `(Σ λ^order y_k²)^{1/2}` at every stored node.
    pub fn norms(&self, eigenvalues: &[f64], order: i32) -> Vec<f64> {
        self.states().map(|y| sobolev_norm(eigenvalues, y, order)).collect()
    }

    /// Pointwise `self + c·other` on the same nodes.
    pub fn axpy(&self, c: f64, other: &Trajectory) -> Result<Trajectory> {
        if self.start != other.start || self.len() != other.len() || self.n_modes != other.n_modes {
            return Err(Error::ShapeMismatch {
                expected: self.states.len(),
                got: other.states.len(),
            });
        }
        Ok(Trajectory {
            start: self.start,
            times: self.times.clone(),
            n_modes: self.n_modes,
            states: self.states.iter().zip(&other.states).map(|(a, b)| a + c * b).collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            start: self.start,
            times: self.times.clone(),
            n_modes: self.n_modes,
            states: self.states.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Weighted norms `‖y/w‖_{H¹₀}` and `‖y/w‖_{H²}` for nodes with
    /// `t ≤ t_last`, given `ln w(t)`. Evaluated as `‖y‖·exp(−ln w)` so small
    /// weights never appear as divisors.
    pub fn weighted_view(&self, eigenvalues: &[f64], ln_weight: impl Fn(f64) -> f64, t_last: f64) -> WeightedView {
        let mut view = WeightedView {
            start: self.start,
            times: Vec::new(),
            h1: Vec::new(),
            h2: Vec::new(),
        };
        for (i, y) in self.states().enumerate() {
            let t = self.times[i];
            if t > t_last {
                break;
            }
            let lw = ln_weight(t);
            view.times.push(t);
            view.h1.push(scaled_norm(sobolev_norm(eigenvalues, y, 1), lw));
            view.h2.push(scaled_norm(sobolev_norm(eigenvalues, y, 2), lw));
        }
        view
    }
}

/// `norm / exp(ln_w)` without forming `exp(ln_w)`.
pub(crate) fn scaled_norm(norm: f64, ln_w: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else {
        (norm.ln() - ln_w).exp()
    }
}

/// Cached weighted norms of a trajectory on the nodes inside the guard.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedView {
    pub start: usize,
    pub times: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Node range `[start, end]` of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn full(path: &BrownianPath) -> Self {
        Self {
            start: 0,
            end: path.n_steps(),
        }
    }

    /// Window from grid times `[t0, t1]`.
    pub fn from_times(path: &BrownianPath, t0: f64, t1: f64) -> Result<Self> {
        let start = path.node_index(t0)?;
        let end = path.node_index(t1)?;
        if start > end {
            return Err(Error::invalid("window start after window end"));
        }
        Ok(Self { start, end })
    }

    fn check(&self, path: &BrownianPath) -> Result<()> {
        if self.start > self.end || self.end > path.n_steps() {
            return Err(Error::invalid(alloc::format!(
                "window [{}, {}] outside the path horizon (0..={})",
                self.start,
                self.end,
                path.n_steps()
            )));
        }
        Ok(())
    }
}

/// `∫₀^Δt e^{−λs} ds`, the exact weight of a source frozen over one step.
fn source_weight(lambda: f64, dt: f64) -> f64 {
    let x = lambda * dt;
    if x == 0.0 {
        dt
    } else {
        -(-x).exp_m1() / lambda
    }
}

/// One exponential-Euler step for a single mode vector.
///
/// `bh` is the already assembled control forcing `B h`. The control enters
/// as `e^{−λΔt}Δt·Bh`, which the discrete HUM Gramian mirrors; the drift
/// source gets the exact weight `(1 − e^{−λΔt})/λ` so stiff modes stay
/// first order in `Δt`.
#[allow(clippy::too_many_arguments)]
pub fn step_linear(
    eigenvalues: &[f64],
    state: &mut [f64],
    bh: Option<&[f64]>,
    f: Option<&[f64]>,
    g: Option<&[f64]>,
    dw: f64,
    dt: f64,
    a: f64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if !dw.is_finite() || state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step input"));
    }
    let n = state.len();
    for v in [bh, f, g].into_iter().flatten() {
        if v.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("step source"));
        }
    }
    let noise = (a * dw - 0.5 * a * a * dt).exp();
    for k in 0..n {
        let mut inc = 0.0;
        if let Some(bh) = bh {
            inc += dt * bh[k];
        }
        if let Some(g) = g {
            inc += g[k] * (dw - a * dt);
        }
        let drift = f.map_or(0.0, |f| source_weight(eigenvalues[k], dt) * f[k]);
        state[k] = noise * ((-eigenvalues[k] * dt).exp() * (state[k] + inc) + drift);
    }
    Ok(())
}

/// Reusable stepper with the per-mode decay factors cached.
pub(crate) struct Stepper<'a> {
    model: &'a HeatModel,
    dt: f64,
    decay: Vec<f64>,
    weight: Vec<f64>,
    bh: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a HeatModel, dt: f64) -> Self {
        let n = model.n_modes();
        Self {
            model,
            dt,
            decay: model.eigenvalues().iter().map(|l| (-l * dt).exp()).collect(),
            weight: model.eigenvalues().iter().map(|&l| source_weight(l, dt)).collect(),
            bh: vec![0.0; n],
            f: vec![0.0; n],
            g: vec![0.0; n],
        }
    }

    pub(crate) fn model(&self) -> &'a HeatModel {
        self.model
    }

    /// Advance `y` across step `n` of `path`; `q` is the control in the
    /// restricted basis (may be shorter than `n_modes`). Sources known to
    /// vanish are passed as `None`.
    pub(crate) fn step(
        &mut self,
        y: &mut [f64],
        n: usize,
        path: &BrownianPath,
        q: Option<&[f64]>,
        f: Option<&dyn SourceTerm>,
        g: Option<&dyn SourceTerm>,
    ) {
        let a = self.model.a();
        let dt = self.dt;
        let dw = path.increments()[n];
        let t = path.time(n);
        let noise = (a * dw - 0.5 * a * a * dt).exp();
        let has_q = match q {
            Some(q) if q.iter().any(|&v| v != 0.0) => {
                self.model.apply_mass(q, &mut self.bh);
                true
            }
            _ => false,
        };
        let has_f = f.is_some();
        if let Some(f) = f {
            f.eval(n, t, &mut self.f);
        }
        let has_g = g.is_some();
        if let Some(g) = g {
            g.eval(n, t, &mut self.g);
        }
        for k in 0..y.len() {
            let mut inc = 0.0;
            if has_q {
                inc += dt * self.bh[k];
            }
            if has_g {
                inc += self.g[k] * (dw - a * dt);
            }
            let drift = if has_f { self.weight[k] * self.f[k] } else { 0.0 };
            y[k] = noise * (self.decay[k] * (y[k] + inc) + drift);
        }
    }
}

fn check_state(model: &HeatModel, y0: &[f64]) -> Result<()> {
    if y0.len() != model.n_modes() {
        return Err(Error::ShapeMismatch {
            expected: model.n_modes(),
            got: y0.len(),
        });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    Ok(())
}

/// Exponential-Euler solve on the path nodes of `window`.
pub fn solve_linear(
    model: &HeatModel,
    y0: &[f64],
    control: Option<&ControlSignal>,
    f: &dyn SourceTerm,
    g: &dyn SourceTerm,
    path: &BrownianPath,
    window: Window,
) -> Result<Trajectory> {
    window.check(path)?;
    check_state(model, y0)?;
    let mut traj = Trajectory::with_capacity(window.start, model.n_modes(), window.end - window.start + 1);
    let mut y = y0.to_vec();
    traj.push(path.time(window.start), &y);
    let mut stepper = Stepper::new(model, path.dt());
    let f = (!f.is_zero()).then_some(f);
    let g = (!g.is_zero()).then_some(g);
    for n in window.start..window.end {
        let q = control.map(|c| c.at(n));
        stepper.step(&mut y, n, path, q, f, g);
        traj.push(path.time(n + 1), &y);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solution"));
    }
    Ok(traj)
}

/// Reference solution for `G ≡ 0` through the noise transform.
///
/// With `E` the exponential factor relative to the window start, `ỹ = y/E`
/// solves `ỹ' = −Λỹ + E⁻¹(B h + F)`; the variation-of-constants integral is
/// evaluated by the trapezoid rule on the path grid (control taken as
/// piecewise constant on each step) and the result is multiplied back by `E`.
pub fn oracle_transform_solution(
    model: &HeatModel,
    y0: &[f64],
    control: Option<&ControlSignal>,
    f: &dyn SourceTerm,
    g: &dyn SourceTerm,
    path: &BrownianPath,
    window: Window,
) -> Result<Trajectory> {
    if !g.is_zero() {
        return Err(Error::invalid("the transform oracle requires G ≡ 0"));
    }
    window.check(path)?;
    check_state(model, y0)?;
    let n_modes = model.n_modes();
    let a = model.a();
    let dt = path.dt();
    let w0 = path.values()[window.start];
    let t0 = path.time(window.start);
    let efac = |n: usize| (a * (path.values()[n] - w0) - 0.5 * a * a * (path.time(n) - t0)).exp();
    let decay: Vec<f64> = model.eigenvalues().iter().map(|l| (-l * dt).exp()).collect();

    let mut traj = Trajectory::with_capacity(window.start, n_modes, window.end - window.start + 1);
    let mut yt = y0.to_vec();
    traj.push(t0, &yt);
    let mut bh = vec![0.0; n_modes];
    let mut fl = vec![0.0; n_modes];
    let mut fr = vec![0.0; n_modes];
    let has_f = !f.is_zero();
    for n in window.start..window.end {
        let (el, er) = (efac(n), efac(n + 1));
        match control.map(|c| c.at(n)) {
            Some(q) => model.apply_mass(q, &mut bh),
            None => bh.iter_mut().for_each(|v| *v = 0.0),
        }
        if has_f {
            f.eval(n, path.time(n), &mut fl);
            f.eval(n + 1, path.time(n + 1), &mut fr);
        }
        for k in 0..n_modes {
            let gl = (bh[k] + fl[k]) / el;
            let gr = (bh[k] + fr[k]) / er;
            yt[k] = decay[k] * yt[k] + 0.5 * dt * (decay[k] * gl + gr);
        }
        let y: Vec<f64> = yt.iter().map(|v| v * er).collect();
        traj.push(path.time(n + 1), &y);
    }
    Ok(traj)
}
