//! Null control with sources that decay at the terminal time.
//!
//! `[0, T]` is cut into blocks `[T_k, T_{k+1}]`, `T_k = T − T/q^k`, snapped
//! to the path grid. On each block the state splits as `y = y₁ + y₂`: `y₁`
//! starts from zero and carries the sources, `y₂` starts from the block's
//! initial value `a_k` and is steered to zero at the block end. The next
//! block starts from `a_{k+1} = y₁(T_{k+1})`. The steering residual of `y₂`
//! (roundoff of the HUM solve) is reported and then dropped, which keeps the
//! glued trajectory exactly zero once the sources have underflowed. Blocks
//! stop when the next one would have fewer than `min_block_steps` steps; the
//! final block runs to `T`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::lrcontrol::{build_lr_schedule, plan_windows, run_span, window_solver, ControlSignal, PlannedWindow};
use crate::paths::BrownianPath;
use crate::sde::{scaled_norm, solve_linear, HeatModel, SourceTerm, Stepper, Trajectory, Window};
use crate::spectral::sobolev_norm;
use crate::weights::Weights;

pub const DEFAULT_MIN_BLOCK_STEPS: usize = 16;

/// How each block steers its initial value to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteeringMode {
    /// One HUM solve on all simulated modes over the whole block.
    DirectHum,
    /// The active/passive schedule rescaled to the block.
    Lr { m_spec: f64, k_max: usize },
}

#[derive(Debug, Clone)]
pub struct SourceBlock {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    windows: Vec<PlannedWindow>,
}

/// Block layout and per-block solvers for one grid; shared across paths.
#[derive(Debug, Clone)]
pub struct SourcePlan {
    weights: Weights,
    dt: f64,
    n_steps: usize,
    blocks: Vec<SourceBlock>,
    guard_node: usize,
}

impl SourcePlan {
    pub fn new(
        model: &HeatModel,
        weights: Weights,
        mode: SteeringMode,
        dt: f64,
        min_block_steps: usize,
    ) -> Result<Self> {
        let horizon = weights.horizon();
        let n_steps = crate::paths::step_count(dt, horizon)?;
        let min_steps = min_block_steps.max(1);
        if n_steps < min_steps {
            return Err(Error::invalid("grid too coarse for a single block"));
        }
        let mut bounds = Vec::new();
        let mut start = 0usize;
        let mut k = 1usize;
        loop {
            let next = (weights.schedule(k)[k] / dt).round() as usize;
            if next < start + min_steps || n_steps < next + min_steps {
                bounds.push((start, n_steps));
                break;
            }
            bounds.push((start, next));
            start = next;
            k += 1;
        }
        let mut blocks = Vec::with_capacity(bounds.len());
        for (index, &(s, e)) in bounds.iter().enumerate() {
            let windows = block_windows(model, mode, dt, s, e).map_err(|err| err.in_window(index))?;
            blocks.push(SourceBlock {
                index,
                start: s,
                end: e,
                windows,
            });
        }
        let guard_node = ((horizon - weights.guard()) / dt).floor() as usize;
        Ok(Self {
            weights,
            dt,
            n_steps,
            blocks,
            guard_node: guard_node.min(n_steps - 1),
        })
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn blocks(&self) -> &[SourceBlock] {
        &self.blocks
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Last node inside `[0, T − t_guard]`.
    pub fn guard_node(&self) -> usize {
        self.guard_node
    }

    fn check_path(&self, path: &BrownianPath) -> Result<()> {
        if path.n_steps() != self.n_steps || (path.dt() - self.dt).abs() > 1e-15 * self.dt {
            return Err(Error::invalid("path grid differs from the plan grid"));
        }
        Ok(())
    }
}

fn block_windows(model: &HeatModel, mode: SteeringMode, dt: f64, s: usize, e: usize) -> Result<Vec<PlannedWindow>> {
    let n = e - s;
    let direct = || -> Result<Vec<PlannedWindow>> {
        Ok(vec![PlannedWindow {
            index: 0,
            start: s,
            end: e,
            hum: window_solver(model, model.n_modes(), dt, n)?,
        }])
    };
    match mode {
        SteeringMode::DirectHum => direct(),
        SteeringMode::Lr { m_spec, k_max } => {
            // keep every window at least one step long
            let fit = (usize::BITS - 1 - n.leading_zeros()) as usize;
            let k = k_max.min(fit.saturating_sub(2));
            if k < 1 {
                return direct();
            }
            let schedule = build_lr_schedule(n as f64 * dt, m_spec, k)?;
            plan_windows(model, &schedule, dt, s, e)
        }
    }
}

/// Free solution `y₁` on nodes `start..=end` from zero, driven by `F`, `G`.
pub fn solve_block_free(
    model: &HeatModel,
    f: &dyn SourceTerm,
    g: &dyn SourceTerm,
    path: &BrownianPath,
    start: usize,
    end: usize,
) -> Result<Trajectory> {
    let zero = vec![0.0; model.n_modes()];
    solve_linear(model, &zero, None, f, g, path, Window::new(start, end))
}

/// Steering part `y₂` of one block.
#[derive(Debug, Clone)]
pub struct BlockSteering {
    pub trajectory: Trajectory,
    /// `‖y₂(T_{k+1})‖ / ‖a_k‖` before the residual is dropped.
    pub residual: f64,
    pub cost: f64,
}

/// Steer `a_k` to zero across block `k`, writing the control into `control`.
pub fn control_block_into(
    model: &HeatModel,
    plan: &SourcePlan,
    k: usize,
    a_k: &[f64],
    path: &BrownianPath,
    control: &mut ControlSignal,
) -> Result<BlockSteering> {
    plan.check_path(path)?;
    let block = plan.blocks.get(k).ok_or(Error::OutOfRange {
        index: k,
        max: plan.blocks.len(),
    })?;
    let mut traj = Trajectory::with_capacity(block.start, model.n_modes(), block.end - block.start + 1);
    let mut y = a_k.to_vec();
    traj.push(path.time(block.start), &y);
    let a_norm = sobolev_norm(&[], a_k, 0);
    if a_norm == 0.0 {
        let traj = Trajectory::zeros(path, block.start, block.end, model.n_modes());
        return Ok(BlockSteering {
            trajectory: traj,
            residual: 0.0,
            cost: 0.0,
        });
    }
    let factors = path.step_factors(model.a());
    let mut stepper = Stepper::new(model, plan.dt);
    let reports = run_span(
        &mut stepper,
        path,
        &factors,
        &block.windows,
        &mut y,
        (block.start, block.end),
        control,
        &mut traj,
    );
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("block steering"));
    }
    Ok(BlockSteering {
        trajectory: traj,
        residual: sobolev_norm(&[], &y, 0) / a_norm,
        cost: reports.iter().map(|r| r.cost).sum(),
    })
}

/// [`control_block_into`] with a fresh control signal.
pub fn control_block(
    model: &HeatModel,
    plan: &SourcePlan,
    k: usize,
    a_k: &[f64],
    path: &BrownianPath,
) -> Result<(ControlSignal, BlockSteering)> {
    let mut control = ControlSignal::zeros(plan.n_steps, model.n_modes(), plan.dt);
    let steer = control_block_into(model, plan, k, a_k, path, &mut control)?;
    control.recompute_cost(model);
    Ok((control, steer))
}

/// Per-block diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReport {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub a_norm: f64,
    pub steer_residual: f64,
    pub cost: f64,
    /// `ln(γ²(T_{k+1} − T_k)‖a_k‖²)`.
    pub ln_cost_bound: f64,
}

impl BlockReport {
    pub fn within_bound(&self) -> bool {
        self.cost == 0.0 || self.cost.ln() <= self.ln_cost_bound
    }
}

/// Weighted quantities of a controlled trajectory on `[0, T − t_guard]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub sup_y_over_rho0_sq: f64,
    pub sup_y_over_rhohat_h1_sq: f64,
    pub int_y_over_rhohat_h2_sq: f64,
    pub control_cost_weighted: f64,
    /// `‖y0‖² + ∫ ‖F/ρ‖² + ∫ ‖G/ρ‖²`.
    pub rhs_bound: f64,
    pub k_stop: usize,
}

impl Certificate {
    /// `(sup ‖y/ρ₀‖² + ∫∫|h/ρ₀|²) / rhs_bound` (0 for zero data).
    pub fn ratio(&self) -> f64 {
        let lhs = self.sup_y_over_rho0_sq + self.control_cost_weighted;
        if self.rhs_bound == 0.0 {
            if lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            lhs / self.rhs_bound
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.sup_y_over_rho0_sq,
            self.sup_y_over_rhohat_h1_sq,
            self.int_y_over_rhohat_h2_sq,
            self.control_cost_weighted,
            self.rhs_bound,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SourceOutcome {
    pub control: ControlSignal,
    pub trajectory: Trajectory,
    pub blocks: Vec<BlockReport>,
    pub certificate: Certificate,
    pub terminal_norm: f64,
}

/// `∫₀^{T−t_guard} ‖S/ρ‖²` (left rectangle rule), in the given norm order.
pub fn weighted_source_integral(
    model: &HeatModel,
    plan: &SourcePlan,
    source: &dyn SourceTerm,
    path: &BrownianPath,
    order: i32,
) -> Result<f64> {
    if source.is_zero() {
        return Ok(0.0);
    }
    let eig = model.eigenvalues();
    let mut buf = vec![0.0; model.n_modes()];
    let mut total = 0.0;
    for n in 0..plan.guard_node {
        let t = path.time(n);
        source.eval(n, t, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("source"));
        }
        let v = scaled_norm(sobolev_norm(eig, &buf, order), plan.weights.ln_rho(t)?);
        total += plan.dt * v * v;
    }
    Ok(total)
}

/// Glue the block controls into a null control for the equation with sources.
pub fn source_term_control(
    model: &HeatModel,
    y0: &[f64],
    f: &dyn SourceTerm,
    g: &dyn SourceTerm,
    path: &BrownianPath,
    plan: &SourcePlan,
) -> Result<SourceOutcome> {
    plan.check_path(path)?;
    let n_modes = model.n_modes();
    if y0.len() != n_modes {
        return Err(Error::ShapeMismatch {
            expected: n_modes,
            got: y0.len(),
        });
    }
    let eig = model.eigenvalues();
    if y0.iter().any(|v| !v.is_finite()) || !sobolev_norm(eig, y0, 1).is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let f_int = weighted_source_integral(model, plan, f, path, 0)?;
    let g_int = weighted_source_integral(model, plan, g, path, 0)?;
    if !f_int.is_finite() || !g_int.is_finite() {
        return Err(Error::UnboundedSource(alloc::format!(
            "∫‖F/ρ‖² = {f_int:e}, ∫‖G/ρ‖² = {g_int:e}"
        )));
    }

    let mut control = ControlSignal::zeros(plan.n_steps, n_modes, plan.dt);
    let mut traj = Trajectory::zeros(path, 0, plan.n_steps, n_modes);
    let mut reports = Vec::with_capacity(plan.blocks.len());
    let mut a = y0.to_vec();
    for (k, block) in plan.blocks.iter().enumerate() {
        let y1 = solve_block_free(model, f, g, path, block.start, block.end)?;
        let a_norm = sobolev_norm(&[], &a, 0);
        let steer = control_block_into(model, plan, k, &a, path, &mut control)?;
        let len = block.end - block.start;
        for i in 0..=len {
            let node = block.start + i;
            let out = traj.state_mut(node);
            let (s1, s2) = (y1.state(i), steer.trajectory.state(i));
            for j in 0..n_modes {
                // the steered part is zero at the block end by construction
                out[j] = if i == len { s1[j] } else { s1[j] + s2[j] };
            }
        }
        let tau = len as f64 * plan.dt;
        let ln_bound = if a_norm == 0.0 {
            f64::NEG_INFINITY
        } else {
            2.0 * plan.weights.ln_gamma(tau)? + 2.0 * a_norm.ln()
        };
        reports.push(BlockReport {
            index: k,
            start: block.start,
            end: block.end,
            a_norm,
            steer_residual: steer.residual,
            cost: steer.cost,
            ln_cost_bound: ln_bound,
        });
        a = y1.terminal().to_vec();
    }
    control.recompute_cost(model);

    // first block from which the trajectory is identically zero
    let k_stop = reports
        .iter()
        .rposition(|r| !traj_zero_from(&traj, r.start))
        .map_or(0, |i| i + 1);

    let certificate = certify(model, plan, y0, &traj, &control, f_int + g_int, k_stop, path)?;
    let terminal_norm = sobolev_norm(&[], traj.terminal(), 0);
    Ok(SourceOutcome {
        control,
        trajectory: traj,
        blocks: reports,
        certificate,
        terminal_norm,
    })
}

fn traj_zero_from(traj: &Trajectory, node: usize) -> bool {
    (node..traj.len()).all(|i| traj.state(i).iter().all(|&v| v == 0.0))
}

#[allow(clippy::too_many_arguments)]
fn certify(
    model: &HeatModel,
    plan: &SourcePlan,
    y0: &[f64],
    traj: &Trajectory,
    control: &ControlSignal,
    source_int: f64,
    k_stop: usize,
    path: &BrownianPath,
) -> Result<Certificate> {
    let eig = model.eigenvalues();
    let w = &plan.weights;
    let dt = plan.dt;
    let mut sup0 = 0.0f64;
    let mut sup1 = 0.0f64;
    let mut int2 = 0.0;
    let mut prev_h2: Option<f64> = None;
    let mut cost = 0.0;
    for n in 0..=plan.guard_node {
        let t = path.time(n);
        let y = traj.state(n);
        let (l0, lh) = (w.ln_rho0(t)?, w.ln_rho_hat(t)?);
        sup0 = sup0.max(scaled_norm(sobolev_norm(eig, y, 0), l0).powi(2));
        sup1 = sup1.max(scaled_norm(sobolev_norm(eig, y, 1), lh).powi(2));
        let h2 = scaled_norm(sobolev_norm(eig, y, 2), lh).powi(2);
        if let Some(p) = prev_h2 {
            int2 += 0.5 * dt * (p + h2);
        }
        prev_h2 = Some(h2);
        if n < plan.guard_node {
            let q = control.at(n);
            if q.iter().any(|&v| v != 0.0) {
                cost += dt * scaled_norm(model.mass_form(q).sqrt(), l0).powi(2);
            }
        }
    }
    Ok(Certificate {
        sup_y_over_rho0_sq: sup0,
        sup_y_over_rhohat_h1_sq: sup1,
        int_y_over_rhohat_h2_sq: int2,
        control_cost_weighted: cost,
        rhs_bound: sobolev_norm(&[], y0, 0).powi(2) + source_int,
        k_stop,
    })
}
