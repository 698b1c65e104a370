//! Per-path null control of the linear equation.
//!
//! On a window starting at node `n0` the change of variable
//! `ỹ_n = y_n · E(t_{n0}) / E(t_n)` turns the discrete scheme of
//! [`crate::sde`] into the deterministic recursion
//! `ỹ_{n+1} = A(ỹ_n + Δt B q̃_n)`, `A = e^{−ΛΔt}`, whenever the applied
//! control is `h_n = (E(t_n)/E(t_{n0})) q̃_n`. The minimal-norm steering
//! of that recursion is the discrete HUM control `q̃_n = A^{N−n} η` with
//! `η = −G_d⁻¹ A^N x0` and `G_d = Δt Σ_{j=1}^N A^j B A^j`; `G_d` is the
//! rectangle-rule version of the continuous Gramian and converges to it.
//! The relative factor uses only increments already drawn, so the control
//! is adapted.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::paths::BrownianPath;
use crate::sde::{HeatModel, Stepper, Trajectory};
use crate::spectral::sobolev_norm;
use crate::statlab::{fit_affine, quantile, AffineFit};

pub const DEFAULT_M_SPEC: f64 = 10.0;
pub const DEFAULT_K_MAX: usize = 6;
/// Jacobi-scaled condition number above which the Gramian is regularized.
pub const CONDITION_CAP: f64 = 1e12;
const TIKHONOV: f64 = 1e-12;

/// Active windows `[a_k, a_k + T_k]` with `T_k = T/2^{k+2}`, `a_{k+1} = a_k + 2T_k`
/// and spectral cutoffs `μ_k = M_spec·4^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    horizon: f64,
    m_spec: f64,
    starts: Vec<f64>,
    durations: Vec<f64>,
    cutoffs: Vec<f64>,
}

/// One active window of a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrWindow {
    pub index: usize,
    pub start: f64,
    pub duration: f64,
    pub cutoff: f64,
}

pub fn build_lr_schedule(horizon: f64, m_spec: f64, k_max: usize) -> Result<LrSchedule> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon must be positive"));
    }
    if !(m_spec > 0.0) || !m_spec.is_finite() {
        return Err(Error::invalid("M_spec must be positive"));
    }
    if k_max < 1 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let mut starts = Vec::with_capacity(k_max + 1);
    let mut durations = Vec::with_capacity(k_max + 1);
    let mut cutoffs = Vec::with_capacity(k_max + 1);
    let mut a = 0.0;
    for k in 0..=k_max {
        let tk = horizon / 2f64.powi(k as i32 + 2);
        starts.push(a);
        durations.push(tk);
        cutoffs.push(m_spec * 4f64.powi(k as i32));
        a += 2.0 * tk;
    }
    if a >= horizon {
        return Err(Error::invalid("schedule does not fit in the horizon"));
    }
    Ok(LrSchedule {
        horizon,
        m_spec,
        starts,
        durations,
        cutoffs,
    })
}

impl LrSchedule {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn m_spec(&self) -> f64 {
        self.m_spec
    }

    pub fn k_max(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn windows(&self) -> impl Iterator<Item = LrWindow> + '_ {
        (0..self.starts.len()).map(move |k| LrWindow {
            index: k,
            start: self.starts[k],
            duration: self.durations[k],
            cutoff: self.cutoffs[k],
        })
    }
}

/// Node range on which a control block acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlBlock {
    pub start: usize,
    pub end: usize,
    pub modes: usize,
}

/// Control coefficients `q_n` (restricted basis `χ_{D₀}φ_k`) held constant
/// on each step `[t_n, t_{n+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    n_modes: usize,
    dt: f64,
    coeffs: Vec<f64>,
    blocks: Vec<ControlBlock>,
    cost: f64,
}

impl ControlSignal {
    pub fn zeros(n_steps: usize, n_modes: usize, dt: f64) -> Self {
        Self {
            n_modes,
            dt,
            coeffs: vec![0.0; n_steps * n_modes],
            blocks: Vec::new(),
            cost: 0.0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.coeffs.len() / self.n_modes.max(1)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Coefficients on step `n`.
    pub fn at(&self, n: usize) -> &[f64] {
        &self.coeffs[n * self.n_modes..(n + 1) * self.n_modes]
    }

    pub(crate) fn at_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.coeffs[n * self.n_modes..(n + 1) * self.n_modes]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn blocks(&self) -> &[ControlBlock] {
        &self.blocks
    }

    pub(crate) fn push_block(&mut self, block: ControlBlock) {
        self.blocks.push(block);
    }

    /// `‖h‖²_{L²((0,T)×D₀)} = Σ_n Δt q_nᵀ B q_n`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn recompute_cost(&mut self, model: &HeatModel) {
        let mut c = 0.0;
        for n in 0..self.n_steps() {
            let q = self.at(n);
            if q.iter().any(|&v| v != 0.0) {
                c += self.dt * model.mass_form(q);
            }
        }
        self.cost = c;
    }

    /// Whether every coefficient on steps `start..end` is exactly zero.
    pub fn is_zero_on(&self, start: usize, end: usize) -> bool {
        (start..end).all(|n| self.at(n).iter().all(|&v| v == 0.0))
    }

    /// Sum of two controls on the same grid (costs recomputed by the caller).
    pub fn add(&mut self, other: &ControlSignal) -> Result<()> {
        if other.coeffs.len() != self.coeffs.len() {
            return Err(Error::ShapeMismatch {
                expected: self.coeffs.len(),
                got: other.coeffs.len(),
            });
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        self.blocks.extend_from_slice(&other.blocks);
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> ControlSignal {
        ControlSignal {
            n_modes: self.n_modes,
            dt: self.dt,
            coeffs: self.coeffs.iter().map(|v| c * v).collect(),
            blocks: self.blocks.clone(),
            cost: c * c * self.cost,
        }
    }

    pub fn max_abs_diff(&self, other: &ControlSignal) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cholesky factor of a Gramian after Jacobi scaling `S = D⁻¹GD⁻¹`,
/// with the Tikhonov shift applied when `S` is too ill-conditioned.
#[derive(Debug, Clone)]
pub struct GramianFactor {
    scale: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
    shift: f64,
}

impl GramianFactor {
    pub fn new(gramian: &DMatrix<f64>) -> Result<Self> {
        let m = gramian.nrows();
        if m == 0 {
            return Err(Error::Empty("Gramian"));
        }
        let scale: Vec<f64> = (0..m).map(|i| gramian[(i, i)].max(0.0).sqrt()).collect();
        if scale.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Conditioning {
                condition: f64::INFINITY,
                window: None,
            });
        }
        let mut s = DMatrix::from_fn(m, m, |i, j| gramian[(i, j)] / (scale[i] * scale[j]));
        let condition = scaled_condition(&s);
        let mut shift = 0.0;
        if condition > CONDITION_CAP {
            shift = TIKHONOV * gramian.trace() / m as f64;
            for i in 0..m {
                s[(i, i)] += shift / (scale[i] * scale[i]);
            }
        }
        match Cholesky::new(s) {
            Some(chol) => Ok(Self {
                scale,
                chol,
                condition,
                shift,
            }),
            None => Err(Error::Conditioning {
                condition,
                window: None,
            }),
        }
    }

    /// Condition number of the Jacobi-scaled Gramian before any shift.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Tikhonov shift added to the Gramian diagonal (0 when none).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `(G + shift·I)⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_iterator(b.len(), b.iter().zip(&self.scale).map(|(v, d)| v / d));
        let x = self.chol.solve(&rhs);
        x.iter().zip(&self.scale).map(|(v, d)| v / d).collect()
    }

    /// `L⁻¹ D⁻¹ diag(w)` where `S = LLᵀ`.
    fn whitened(&self, w: &[f64]) -> DMatrix<f64> {
        let m = w.len();
        let mut x = DMatrix::from_fn(m, m, |i, j| if i == j { w[i] / self.scale[i] } else { 0.0 });
        let l = self.chol.l();
        l.solve_lower_triangular_mut(&mut x);
        x
    }
}

fn scaled_condition(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_low(eigenvalues: &[f64], mass: &DMatrix<f64>) -> Result<usize> {
    let m = eigenvalues.len();
    if m == 0 {
        return Err(Error::Empty("mode set"));
    }
    if mass.nrows() < m || mass.ncols() < m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: mass.nrows().min(mass.ncols()),
        });
    }
    Ok(m)
}

/// Continuous Gramian `G_ij = B_ij (1 − e^{−(λ_i+λ_j)τ})/(λ_i+λ_j)` on the
/// leading `eigenvalues.len()` modes.
pub fn hum_gramian(eigenvalues: &[f64], mass: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid("tau must be positive"));
    }
    let m = check_low(eigenvalues, mass)?;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let s = eigenvalues[i] + eigenvalues[j];
        let f = if s == 0.0 { tau } else { -(-s * tau).exp_m1() / s };
        mass[(i, j)] * f
    }))
}

/// Minimal-norm steering `q(t) = e^{−Λ(τ−t)}η` of `ẋ = −Λx + Bq`.
#[derive(Debug, Clone, PartialEq)]
pub struct HumControl {
    pub eigenvalues: Vec<f64>,
    pub tau: f64,
    pub eta: Vec<f64>,
    pub cost: f64,
    pub condition: f64,
    pub shift: f64,
}

impl HumControl {
    /// `q(t)` for `t ∈ [0, τ]`.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (-self.eigenvalues[k] * (self.tau - t)).exp() * self.eta[k];
        }
    }

    /// Samples of `q` on `n + 1` equispaced times.
    pub fn sample(&self, n: usize) -> Vec<Vec<f64>> {
        (0..=n)
            .map(|i| {
                let mut q = vec![0.0; self.eta.len()];
                self.eval(self.tau * i as f64 / n.max(1) as f64, &mut q);
                q
            })
            .collect()
    }
}

pub fn hum_control(x0: &[f64], eigenvalues: &[f64], mass: &DMatrix<f64>, tau: f64) -> Result<HumControl> {
    if x0.len() != eigenvalues.len() {
        return Err(Error::ShapeMismatch {
            expected: eigenvalues.len(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let g = hum_gramian(eigenvalues, mass, tau)?;
    let factor = GramianFactor::new(&g)?;
    let target: Vec<f64> = x0.iter().zip(eigenvalues).map(|(x, l)| -x * (-l * tau).exp()).collect();
    let eta = factor.solve(&target);
    let cost = quad_form(&g, &eta);
    Ok(HumControl {
        eigenvalues: eigenvalues.to_vec(),
        tau,
        eta,
        cost,
        condition: factor.condition(),
        shift: factor.shift(),
    })
}

fn quad_form(g: &DMatrix<f64>, v: &[f64]) -> f64 {
    let m = v.len();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += v[i] * g[(i, j)] * v[j];
        }
    }
    s
}

/// Largest generalized eigenvalue of `(e^{−2Λτ}, G)`: the sharp constant in
/// `‖z(0)‖² ≤ κ ∫₀^τ ∫_{D₀} |z|²` for projected adjoint solutions.
pub fn observability_constant(eigenvalues: &[f64], mass: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let g = hum_gramian(eigenvalues, mass, tau)?;
    let factor = GramianFactor::new(&g)?;
    let w: Vec<f64> = eigenvalues.iter().map(|l| (-l * tau).exp()).collect();
    let x = factor.whitened(&w);
    let xtx = x.transpose() * &x;
    let eig = SymmetricEigen::new(xtx).eigenvalues;
    Ok(eig.iter().cloned().fold(0.0, f64::max))
}

/// `log κ(λ_m, τ)` against `√λ_m` for `m = 1..=max_modes`, with an affine fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityCurve {
    pub tau: f64,
    pub sqrt_mu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub fit: AffineFit,
}

pub fn observability_curve(model: &HeatModel, tau: f64, max_modes: usize) -> Result<ObservabilityCurve> {
    if max_modes < 2 || max_modes > model.n_modes() {
        return Err(Error::invalid("need between 2 and n_modes cutoffs"));
    }
    let eig = model.eigenvalues();
    let mut sqrt_mu = Vec::with_capacity(max_modes);
    let mut kappa = Vec::with_capacity(max_modes);
    for m in 1..=max_modes {
        let b = model.mass().view((0, 0), (m, m)).into_owned();
        kappa.push(observability_constant(&eig[..m], &b, tau)?);
        sqrt_mu.push(eig[m - 1].sqrt());
    }
    let logk: Vec<f64> = kappa.iter().map(|k| k.ln()).collect();
    let fit = fit_affine(&sqrt_mu, &logk)?;
    Ok(ObservabilityCurve {
        tau,
        sqrt_mu,
        kappa,
        fit,
    })
}

/// Discrete HUM solver for one window: `m` modes, `N` steps of size `Δt`.
#[derive(Debug, Clone)]
pub struct DiscreteHum {
    eigenvalues: Vec<f64>,
    dt: f64,
    n_steps: usize,
    gramian: DMatrix<f64>,
    factor: GramianFactor,
}

impl DiscreteHum {
    pub fn new(eigenvalues: &[f64], mass: &DMatrix<f64>, dt: f64, n_steps: usize) -> Result<Self> {
        let m = check_low(eigenvalues, mass)?;
        if !(dt > 0.0) || n_steps == 0 {
            return Err(Error::invalid("window needs a positive step and at least one step"));
        }
        let nf = n_steps as f64;
        let gramian = DMatrix::from_fn(m, m, |i, j| {
            let s = (eigenvalues[i] + eigenvalues[j]) * dt;
            // Σ_{j=1}^N r^j with r = e^{−s}
            let geo = if s == 0.0 {
                nf
            } else {
                (-s).exp() * (-s * nf).exp_m1() / (-s).exp_m1()
            };
            dt * mass[(i, j)] * geo
        });
        let factor = GramianFactor::new(&gramian)?;
        Ok(Self {
            eigenvalues: eigenvalues.to_vec(),
            dt,
            n_steps,
            gramian,
            factor,
        })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn gramian(&self) -> &DMatrix<f64> {
        &self.gramian
    }

    pub fn condition(&self) -> f64 {
        self.factor.condition()
    }

    pub fn shift(&self) -> f64 {
        self.factor.shift()
    }

    /// `η = −G_d⁻¹ A^N x0`.
    pub fn steer(&self, x0: &[f64]) -> Vec<f64> {
        let horizon = self.dt * self.n_steps as f64;
        let target: Vec<f64> = x0
            .iter()
            .zip(&self.eigenvalues)
            .map(|(x, l)| -x * (-l * horizon).exp())
            .collect();
        self.factor.solve(&target)
    }

    /// `q̃_j = A^{N−j} η` on local step `j`.
    pub fn control(&self, eta: &[f64], j: usize, out: &mut [f64]) {
        let remaining = (self.n_steps - j) as f64 * self.dt;
        for (k, o) in out.iter_mut().take(eta.len()).enumerate() {
            *o = (-self.eigenvalues[k] * remaining).exp() * eta[k];
        }
    }

    /// Cost `ηᵀ G_d η` of the transformed problem.
    pub fn cost(&self, eta: &[f64]) -> f64 {
        quad_form(&self.gramian, eta)
    }

    /// `A^N x0 + G_d η`, the terminal state of the transformed recursion.
    pub fn terminal(&self, x0: &[f64], eta: &[f64]) -> Vec<f64> {
        let horizon = self.dt * self.n_steps as f64;
        let m = self.modes();
        (0..m)
            .map(|i| {
                let gi: f64 = (0..m).map(|j| self.gramian[(i, j)] * eta[j]).sum();
                x0[i] * (-self.eigenvalues[i] * horizon).exp() + gi
            })
            .collect()
    }
}

/// A window resolved onto the path grid, with its solver when any mode lies
/// below the cutoff.
#[derive(Debug, Clone)]
pub struct PlannedWindow {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub hum: Option<DiscreteHum>,
}

/// Schedule resolved on a grid with all Gramians precomputed; shared
/// read-only by every path with the same `(dt, T)`.
#[derive(Debug, Clone)]
pub struct LrPlan {
    n_steps: usize,
    dt: f64,
    windows: Vec<PlannedWindow>,
}

fn snap(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

/// Resolve the windows of `schedule`, shifted to start at node `offset`,
/// onto the grid of step `dt`.
pub(crate) fn plan_windows(
    model: &HeatModel,
    schedule: &LrSchedule,
    dt: f64,
    offset: usize,
    n_end: usize,
) -> Result<Vec<PlannedWindow>> {
    let mut windows = Vec::new();
    for w in schedule.windows() {
        let start = offset + snap(w.start, dt);
        let end = (offset + snap(w.start + w.duration, dt)).min(n_end);
        if end <= start {
            return Err(Error::invalid(alloc::format!(
                "active window {} is shorter than one time step",
                w.index
            )));
        }
        windows.push(PlannedWindow {
            index: w.index,
            start,
            end,
            hum: window_solver(model, model.grid().modes_below(w.cutoff), dt, end - start)
                .map_err(|e| e.in_window(w.index))?,
        });
    }
    Ok(windows)
}

/// Discrete HUM solver on the leading `m` modes (none when `m = 0`).
pub(crate) fn window_solver(model: &HeatModel, m: usize, dt: f64, n_steps: usize) -> Result<Option<DiscreteHum>> {
    if m == 0 {
        return Ok(None);
    }
    let b = model.mass().view((0, 0), (m, m)).into_owned();
    DiscreteHum::new(&model.eigenvalues()[..m], &b, dt, n_steps).map(Some)
}

impl LrPlan {
    pub fn new(model: &HeatModel, schedule: &LrSchedule, dt: f64) -> Result<Self> {
        let n_steps = crate::paths::step_count(dt, schedule.horizon())?;
        let windows = plan_windows(model, schedule, dt, 0, n_steps)?;
        Ok(Self { n_steps, dt, windows })
    }

    pub fn windows(&self) -> &[PlannedWindow] {
        &self.windows
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Run the active/passive scheme on one path.
    pub fn run(&self, model: &HeatModel, y0: &[f64], path: &BrownianPath) -> Result<LrOutcome> {
        if path.n_steps() != self.n_steps || (path.dt() - self.dt).abs() > 1e-15 * self.dt {
            return Err(Error::invalid("path grid differs from the plan grid"));
        }
        if y0.len() != model.n_modes() {
            return Err(Error::ShapeMismatch {
                expected: model.n_modes(),
                got: y0.len(),
            });
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let n_modes = model.n_modes();
        let factors = path.step_factors(model.a());
        let mut control = ControlSignal::zeros(self.n_steps, n_modes, self.dt);
        let mut traj = Trajectory::with_capacity(0, n_modes, self.n_steps + 1);
        let mut stepper = Stepper::new(model, self.dt);
        let mut y = y0.to_vec();
        traj.push(0.0, &y);
        let reports = run_span(
            &mut stepper,
            path,
            &factors,
            &self.windows,
            &mut y,
            (0, self.n_steps),
            &mut control,
            &mut traj,
        );
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controlled solution"));
        }
        control.recompute_cost(model);
        let terminal_norm = norm2(&y);
        Ok(LrOutcome {
            control,
            trajectory: traj,
            windows: reports,
            initial_norm: norm2(y0),
            terminal_norm,
        })
    }
}

/// Step `y` from node `span.0` to `span.1` without sources, steering on the
/// given windows (which must lie inside the span) and passive elsewhere.
/// States after each step are appended to `traj`; controls are written into
/// `control` at their absolute step index.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_span(
    stepper: &mut Stepper<'_>,
    path: &BrownianPath,
    factors: &[f64],
    windows: &[PlannedWindow],
    y: &mut [f64],
    span: (usize, usize),
    control: &mut ControlSignal,
    traj: &mut Trajectory,
) -> Vec<WindowReport> {
    let model = stepper.model();
    let dt = path.dt();
    let mut reports = Vec::with_capacity(windows.len());
    let mut n = span.0;
    for w in windows {
        while n < w.start {
            stepper.step(y, n, path, None, None, None);
            n += 1;
            traj.push(path.time(n), y);
        }
        let Some(hum) = &w.hum else {
            reports.push(WindowReport::passive(w));
            continue;
        };
        let m = hum.modes();
        let x0 = y[..m].to_vec();
        let initial = norm2(&x0);
        let eta = hum.steer(&x0);
        let mut rel = 1.0;
        let mut cost = 0.0;
        while n < w.end {
            {
                let q = control.at_mut(n);
                hum.control(&eta, n - w.start, &mut q[..m]);
                q[..m].iter_mut().for_each(|v| *v *= rel);
            }
            let q = control.at(n);
            cost += dt * model.mass_form(&q[..m]);
            stepper.step(y, n, path, Some(&q[..m]), None, None);
            rel *= factors[n];
            n += 1;
            traj.push(path.time(n), y);
        }
        control.push_block(ControlBlock {
            start: w.start,
            end: w.end,
            modes: m,
        });
        let final_low = norm2(&y[..m]);
        reports.push(WindowReport {
            index: w.index,
            start: w.start,
            end: w.end,
            modes: m,
            initial_norm: initial,
            residual: if initial > 0.0 { final_low / initial } else { final_low },
            transformed_cost: hum.cost(&eta),
            cost,
            condition: hum.condition(),
            shift: hum.shift(),
        });
    }
    while n < span.1 {
        stepper.step(y, n, path, None, None, None);
        n += 1;
        traj.push(path.time(n), y);
    }
    reports
}

fn norm2(v: &[f64]) -> f64 {
    sobolev_norm(&[], v, 0)
}

/// Per-window diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// Modes steered (0 for a window below the first eigenvalue).
    pub modes: usize,
    pub initial_norm: f64,
    /// `‖Π y(end)‖ / ‖Π y(start)‖` on the steered modes.
    pub residual: f64,
    pub transformed_cost: f64,
    pub cost: f64,
    pub condition: f64,
    pub shift: f64,
}

impl WindowReport {
    fn passive(w: &PlannedWindow) -> Self {
        Self {
            index: w.index,
            start: w.start,
            end: w.end,
            modes: 0,
            initial_norm: 0.0,
            residual: 0.0,
            transformed_cost: 0.0,
            cost: 0.0,
            condition: 1.0,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LrOutcome {
    pub control: ControlSignal,
    pub trajectory: Trajectory,
    pub windows: Vec<WindowReport>,
    pub initial_norm: f64,
    pub terminal_norm: f64,
}

impl LrOutcome {
    /// `‖y(T)‖² / ‖y0‖²` (0 for zero data).
    pub fn terminal_ratio_sq(&self) -> f64 {
        if self.initial_norm == 0.0 {
            0.0
        } else {
            (self.terminal_norm / self.initial_norm).powi(2)
        }
    }

    /// Error unless `‖y(T)‖ ≤ tolerance·‖y0‖`.
    pub fn check_terminal(&self, tolerance: f64) -> Result<()> {
        let allowed = tolerance * self.initial_norm;
        if self.terminal_norm > allowed {
            return Err(Error::NonConvergentDecay {
                terminal: self.terminal_norm,
                tolerance: allowed,
            });
        }
        Ok(())
    }
}

/// Plan and run in one call.
pub fn lr_null_control(model: &HeatModel, y0: &[f64], path: &BrownianPath, schedule: &LrSchedule) -> Result<LrOutcome> {
    if (schedule.horizon() - path.horizon()).abs() > 1e-12 * path.horizon() {
        return Err(Error::invalid("schedule horizon differs from the path horizon"));
    }
    LrPlan::new(model, schedule, path.dt())?.run(model, y0, path)
}

/// Least-squares fit `log cost ≈ c0 + c1/T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostFit {
    pub c0: f64,
    pub c1: f64,
    pub r2: f64,
    /// Cost constant `M` with `C_T ≤ M e^{M/T}` implied by the fit:
    /// `max(e^{c0}, c1)`.
    pub m_cost: f64,
}

pub fn fit_cost_curve(horizons: &[f64], costs: &[f64]) -> Result<CostFit> {
    if horizons.len() < 3 {
        return Err(Error::invalid("cost fit needs at least three horizons"));
    }
    if horizons.len() != costs.len() {
        return Err(Error::ShapeMismatch {
            expected: horizons.len(),
            got: costs.len(),
        });
    }
    if costs.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::invalid("costs must be positive"));
    }
    let x: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let y: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let fit = fit_affine(&x, &y)?;
    Ok(CostFit {
        c0: fit.intercept,
        c1: fit.slope,
        r2: fit.r2,
        m_cost: fit.intercept.exp().max(fit.slope),
    })
}

/// Cost statistics at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPoint {
    pub horizon: f64,
    pub n_paths: usize,
    pub cost_median: f64,
    pub cost_q25: f64,
    pub cost_q75: f64,
    pub terminal_norm_median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub points: Vec<CostPoint>,
    pub fit: CostFit,
}

/// Settings of a cost-curve experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurveConfig {
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Steps per horizon (the grid scales with `T`).
    pub steps: usize,
    pub m_spec: f64,
    pub k_max: usize,
}

impl Default for CostCurveConfig {
    fn default() -> Self {
        Self {
            horizons: vec![0.25, 0.5, 1.0],
            n_paths: 1,
            seed: 0,
            steps: 2048,
            m_spec: DEFAULT_M_SPEC,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Cost of LR null control per unit `‖y0‖²` across horizons, with the
/// `c0 + c1/T` fit of the log median cost.
pub fn estimate_cost_constant(model: &HeatModel, y0: &[f64], config: &CostCurveConfig) -> Result<CostCurve> {
    if config.horizons.len() < 3 {
        return Err(Error::invalid("cost fit needs at least three horizons"));
    }
    if config.n_paths == 0 {
        return Err(Error::Empty("path set"));
    }
    let y0_sq = norm2(y0).powi(2);
    if y0_sq == 0.0 {
        return Err(Error::invalid("initial state must be nonzero"));
    }
    let mut points = Vec::with_capacity(config.horizons.len());
    for &t in &config.horizons {
        let dt = t / config.steps as f64;
        let schedule = build_lr_schedule(t, config.m_spec, config.k_max)?;
        let plan = LrPlan::new(model, &schedule, dt)?;
        let mut costs = Vec::with_capacity(config.n_paths);
        let mut terms = Vec::with_capacity(config.n_paths);
        for i in 0..config.n_paths {
            let path = crate::paths::sample_path_stream(config.seed, i as u64, dt, t)?;
            let out = plan.run(model, y0, &path)?;
            costs.push(out.control.cost() / y0_sq);
            terms.push(out.terminal_norm);
        }
        costs.sort_by(f64::total_cmp);
        terms.sort_by(f64::total_cmp);
        points.push(CostPoint {
            horizon: t,
            n_paths: config.n_paths,
            cost_median: quantile(&costs, 0.5),
            cost_q25: quantile(&costs, 0.25),
            cost_q75: quantile(&costs, 0.75),
            terminal_norm_median: quantile(&terms, 0.5),
        });
    }
    let hs: Vec<f64> = points.iter().map(|p| p.horizon).collect();
    let cs: Vec<f64> = points.iter().map(|p| p.cost_median).collect();
    let fit = fit_cost_curve(&hs, &cs)?;
    Ok(CostCurve { points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn schedule_values() {
        let s = build_lr_schedule(1.0, 10.0, 3).unwrap();
        assert_eq!(s.durations()[0], 0.25);
        assert_eq!(s.starts()[1], 0.5);
        assert_eq!(s.durations()[1], 0.125);
        assert_eq!(s.starts()[2], 0.75);
        assert_eq!(&s.cutoffs()[..3], &[10.0, 40.0, 160.0]);
        assert!(build_lr_schedule(1.0, 10.0, 0).is_err());
    }

    #[test]
    fn scalar_gramian_and_cost() {
        let b = DMatrix::from_element(1, 1, 1.0);
        let lam = [PI * PI];
        let g = hum_gramian(&lam, &b, 0.25).unwrap();
        let exact = -(-PI * PI / 2.0).exp_m1() / (2.0 * PI * PI);
        assert!((g[(0, 0)] - exact).abs() < 1e-15);
        assert!((g[(0, 0)] / 0.050304 - 1.0).abs() < 5e-4);
        let c = hum_control(&[1.0], &lam, &b, 0.25).unwrap();
        assert!((c.cost - (-PI * PI / 2.0).exp() / exact).abs() < 1e-13);
        assert!((c.cost / 0.14344 - 1.0).abs() < 5e-3);
        let z = hum_control(&[0.0], &lam, &b, 0.25).unwrap();
        assert_eq!(z.cost, 0.0);
    }

    #[test]
    fn scalar_observability() {
        let b = DMatrix::from_element(1, 1, 1.0);
        let l = PI * PI;
        let k = observability_constant(&[l], &b, 0.1).unwrap();
        let expect = 2.0 * l * (-2.0 * l * 0.1).exp() / (1.0 - (-2.0 * l * 0.1).exp());
        assert!((k - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn cost_fit_exact() {
        let c: f64 = 2.5;
        let ts = [0.25, 0.5, 1.0];
        let costs: Vec<f64> = ts.iter().map(|t| c * (c / t).exp()).collect();
        let fit = fit_cost_curve(&ts, &costs).unwrap();
        assert!((fit.c0 - c.ln()).abs() < 1e-10);
        assert!((fit.c1 - c).abs() < 1e-10);
        assert!(fit_cost_curve(&ts[..2], &costs[..2]).is_err());
    }

    #[test]
    fn discrete_gramian_tends_to_continuous() {
        let lam = [PI * PI, 4.0 * PI * PI];
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
        let g = hum_gramian(&lam, &b, 0.25).unwrap();
        let gd = DiscreteHum::new(&lam, &b, 0.25 / 4096.0, 4096).unwrap();
        assert!((gd.gramian() - &g).abs().max() < 1e-3 * g.abs().max());
    }
}
