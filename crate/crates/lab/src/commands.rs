//! Subcommand implementations. Each writes its artifacts through an
//! [`OutputSet`] plus a `manifest.json`; nothing is left behind on error.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use nullctl_core::lrcontrol::{build_lr_schedule, observability_curve, LrOutcome, LrPlan};
use nullctl_core::paths::sample_path_stream;
use nullctl_core::sde::{solve_linear, NoSource, Trajectory, Window};
use nullctl_core::semilinear::{picard_iterate, TruncationParams};
use nullctl_core::source_method::{source_term_control, Certificate};
use nullctl_core::spectral::sobolev_norm;
use nullctl_core::statlab::{
    calibrate_delta, sample_initial_state, summarize, EnsembleConfig, EnsembleResult, EnsembleSummary,
};

use crate::checks::{self, CheckOutcome, Scale};
use crate::config::Config;
use crate::output::{encode_path, json_num, num, OutputSet, Table};
use crate::parallel::{map_indices, run_ensemble};
use crate::svg::{Chart, Series};
use crate::LabError;

/// What a finished command reports on stdout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    n_paths: usize,
    outputs: Vec<String>,
    config: String,
}

pub fn config_hash(cfg: &Config) -> String {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn finish(command: &str, cfg: &Config, mut out: OutputSet, lines: Vec<String>) -> Result<Report, LabError> {
    let mut outputs = out.names();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        outputs: outputs.clone(),
        config: cfg.canonical(),
    };
    out.json("manifest.json", &manifest)?;
    out.commit();
    Ok(Report { lines, outputs })
}

fn trajectory_table(traj: &Trajectory, eig: &[f64]) -> Table {
    let m = traj.n_modes();
    let mut header: Vec<String> = vec!["t".into(), "l2".into(), "h1".into()];
    header.extend((1..=m).map(|k| format!("y_{k}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for i in 0..traj.len() {
        let y = traj.state(i);
        let mut row = vec![
            num(traj.times()[i]),
            num(sobolev_norm(&[], y, 0)),
            num(sobolev_norm(eig, y, 1)),
        ];
        row.extend(y.iter().map(|&v| num(v)));
        t.push(row);
    }
    t
}

/// Uncontrolled linear SPDE from a random unit initial state.
pub fn simulate(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let model = cfg.model()?;
    let path = sample_path_stream(cfg.seed, 0, cfg.dt, cfg.horizon)?;
    let y0 = sample_initial_state(cfg.seed, 0, model.eigenvalues(), 1.0);
    let traj = solve_linear(&model, &y0, None, &NoSource, &NoSource, &path, Window::full(&path))?;
    out.csv("trajectory.csv", &trajectory_table(&traj, model.eigenvalues()))?;
    out.write("path.bin", &encode_path(&path))?;
    let lines = vec![format!(
        "uncontrolled: ‖y(0)‖ = {:.6e}, ‖y(T)‖ = {:.6e}",
        sobolev_norm(&[], &y0, 0),
        sobolev_norm(&[], traj.terminal(), 0)
    )];
    finish("simulate", cfg, out, lines)
}

fn lr_initial_state(n: usize) -> Vec<f64> {
    (0..n).map(|k| if k < 8 { 1.0 / (k + 1) as f64 } else { 0.0 }).collect()
}

#[derive(Serialize)]
struct LinearSummary {
    n_paths: usize,
    #[serde(serialize_with = "json_num")]
    median_terminal_ratio_sq: f64,
    #[serde(serialize_with = "json_num")]
    max_terminal_ratio_sq: f64,
    #[serde(serialize_with = "json_num")]
    median_cost: f64,
}

/// LR null control over `n_paths` paths.
pub fn control_linear(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let model = cfg.model()?;
    let schedule = build_lr_schedule(cfg.horizon, cfg.m_spec, cfg.k_max)?;
    let plan = LrPlan::new(&model, &schedule, cfg.dt)?;
    let y0 = lr_initial_state(cfg.n_modes);
    let runs = map_indices(cfg.n_paths, |i| -> Result<LrOutcome, LabError> {
        let path = sample_path_stream(cfg.seed, i, cfg.dt, cfg.horizon)?;
        Ok(plan.run(&model, &y0, &path)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut paths = Table::new(&["path_id", "terminal_ratio_sq", "terminal_norm", "cost"]);
    for (i, r) in runs.iter().enumerate() {
        paths.push(vec![
            i.to_string(),
            num(r.terminal_ratio_sq()),
            num(r.terminal_norm),
            num(r.control.cost()),
        ]);
    }
    out.csv("paths.csv", &paths)?;
    let first = &runs[0];
    let mut windows = Table::new(&[
        "window",
        "start",
        "end",
        "modes",
        "residual",
        "cost",
        "condition",
        "shift",
    ]);
    for w in &first.windows {
        windows.push(vec![
            w.index.to_string(),
            w.start.to_string(),
            w.end.to_string(),
            w.modes.to_string(),
            num(w.residual),
            num(w.cost),
            num(w.condition),
            num(w.shift),
        ]);
    }
    out.csv("windows.csv", &windows)?;
    out.csv(
        "trajectory.csv",
        &trajectory_table(&first.trajectory, model.eigenvalues()),
    )?;

    let ratios: Vec<f64> = runs.iter().map(|r| r.terminal_ratio_sq()).collect();
    let costs: Vec<f64> = runs.iter().map(|r| r.control.cost()).collect();
    let summary = LinearSummary {
        n_paths: cfg.n_paths,
        median_terminal_ratio_sq: nullctl_core::statlab::median(&ratios),
        max_terminal_ratio_sq: ratios.iter().cloned().fold(0.0, f64::max),
        median_cost: nullctl_core::statlab::median(&costs),
    };
    out.json("control_linear.json", &summary)?;
    let lines = vec![format!(
        "median ‖y(T)‖²/‖y0‖² = {:.6e} over {} paths, median cost {:.6e}",
        summary.median_terminal_ratio_sq, cfg.n_paths, summary.median_cost
    )];
    finish("control-linear", cfg, out, lines)
}

#[derive(Serialize)]
struct CostFitJson {
    #[serde(serialize_with = "json_num")]
    c0: f64,
    #[serde(serialize_with = "json_num")]
    c1: f64,
    #[serde(serialize_with = "json_num")]
    r2: f64,
    #[serde(rename = "M_cost", serialize_with = "json_num")]
    m_cost: f64,
}

/// Deterministic cost sweep over the configured horizons.
pub fn cost_curve(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let (curve, check) = checks::cost_curve(cfg)?;
    let mut t = Table::new(&[
        "T",
        "n_paths",
        "cost_median",
        "cost_q25",
        "cost_q75",
        "terminal_norm_median",
    ]);
    for p in &curve.points {
        t.push(vec![
            num(p.horizon),
            p.n_paths.to_string(),
            num(p.cost_median),
            num(p.cost_q25),
            num(p.cost_q75),
            num(p.terminal_norm_median),
        ]);
    }
    out.csv("cost_curve.csv", &t)?;
    out.json(
        "cost_fit.json",
        &CostFitJson {
            c0: curve.fit.c0,
            c1: curve.fit.c1,
            r2: curve.fit.r2,
            m_cost: curve.fit.m_cost,
        },
    )?;
    let lines = vec![
        format!(
            "log cost ≈ {:.6} + {:.6}/T, R² = {:.6}, M_cost = {:.6}",
            curve.fit.c0, curve.fit.c1, curve.fit.r2, curve.fit.m_cost
        ),
        check.line(),
    ];
    finish("cost-curve", cfg, out, lines)
}

#[derive(Serialize)]
struct ObsFitJson {
    #[serde(serialize_with = "json_num")]
    tau: f64,
    #[serde(serialize_with = "json_num")]
    intercept: f64,
    #[serde(serialize_with = "json_num")]
    slope: f64,
    #[serde(serialize_with = "json_num")]
    r2: f64,
}

/// Observability constant against the spectral cutoff.
pub fn obs_curve(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let model = cfg.model()?;
    let curve = observability_curve(&model, cfg.obs_tau, cfg.obs_modes)?;
    let mut t = Table::new(&["modes", "mu", "sqrt_mu", "kappa", "log_kappa"]);
    for (i, (&s, &k)) in curve.sqrt_mu.iter().zip(&curve.kappa).enumerate() {
        t.push(vec![(i + 1).to_string(), num(s * s), num(s), num(k), num(k.ln())]);
    }
    out.csv("obs_curve.csv", &t)?;
    out.json(
        "obs_fit.json",
        &ObsFitJson {
            tau: curve.tau,
            intercept: curve.fit.intercept,
            slope: curve.fit.slope,
            r2: curve.fit.r2,
        },
    )?;
    let lines = vec![format!(
        "log κ ≈ {:.6} + {:.6}·√μ, R² = {:.6}",
        curve.fit.intercept, curve.fit.slope, curve.fit.r2
    )];
    finish("obs-curve", cfg, out, lines)
}

#[derive(Serialize)]
struct CertificateJson {
    #[serde(serialize_with = "json_num")]
    sup_y_over_rho0_sq: f64,
    #[serde(serialize_with = "json_num")]
    sup_y_over_rhohat_h1_sq: f64,
    #[serde(serialize_with = "json_num")]
    int_y_over_rhohat_h2_sq: f64,
    #[serde(serialize_with = "json_num")]
    control_cost_weighted: f64,
    #[serde(serialize_with = "json_num")]
    rhs_bound: f64,
    k_stop: usize,
}

impl From<&Certificate> for CertificateJson {
    fn from(c: &Certificate) -> Self {
        Self {
            sup_y_over_rho0_sq: c.sup_y_over_rho0_sq,
            sup_y_over_rhohat_h1_sq: c.sup_y_over_rhohat_h1_sq,
            int_y_over_rhohat_h2_sq: c.int_y_over_rhohat_h2_sq,
            control_cost_weighted: c.control_cost_weighted,
            rhs_bound: c.rhs_bound,
            k_stop: c.k_stop,
        }
    }
}

/// Source-term method with the demo sources on every path.
pub fn source_demo(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let model = cfg.model()?;
    let plan = checks::source_plan(cfg, &model)?;
    let w = cfg.weights();
    let y0 = checks::demo_initial_state(cfg.n_modes);
    let runs = map_indices(cfg.n_paths, |i| -> Result<_, LabError> {
        let path = sample_path_stream(cfg.seed, i, cfg.dt, cfg.horizon)?;
        let (f, g) = checks::demo_sources(&w, &path, cfg.n_modes);
        Ok(source_term_control(&model, &y0, &f, &g, &path, &plan)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut certs = Table::new(&["path_id", "terminal_norm", "ratio", "k_stop", "control_cost"]);
    for (i, r) in runs.iter().enumerate() {
        certs.push(vec![
            i.to_string(),
            num(r.terminal_norm),
            num(r.certificate.ratio()),
            r.certificate.k_stop.to_string(),
            num(r.control.cost()),
        ]);
    }
    out.csv("certificates.csv", &certs)?;
    let first = &runs[0];
    out.json("certificate.json", &CertificateJson::from(&first.certificate))?;
    let mut blocks = Table::new(&[
        "block",
        "start",
        "end",
        "a_norm",
        "steer_residual",
        "cost",
        "ln_cost_bound",
    ]);
    for b in &first.blocks {
        blocks.push(vec![
            b.index.to_string(),
            b.start.to_string(),
            b.end.to_string(),
            num(b.a_norm),
            num(b.steer_residual),
            num(b.cost),
            num(b.ln_cost_bound),
        ]);
    }
    out.csv("blocks.csv", &blocks)?;
    let mut weights = Table::new(&["t", "gamma", "rho0", "rho", "rho_hat"]);
    for n in 1..=plan.guard_node() {
        let t = n as f64 * cfg.dt;
        weights.push(vec![
            num(t),
            num(w.gamma(t)?),
            num(w.rho0(t)?),
            num(w.rho(t)?),
            num(w.rho_hat(t)?),
        ]);
    }
    out.csv("weights.csv", &weights)?;
    let ratios: Vec<f64> = runs.iter().map(|r| r.certificate.ratio()).collect();
    let lines = vec![format!(
        "{} blocks, max ‖y(T)‖ = {:.6e}, certificate ratio median {:.6e}",
        plan.blocks().len(),
        runs.iter().map(|r| r.terminal_norm).fold(0.0, f64::max),
        nullctl_core::statlab::median(&ratios)
    )];
    finish("source-demo", cfg, out, lines)
}

/// `(Ĉ², R, δ)` with `auto` values filled in by calibration.
fn resolve_radii(cfg: &Config, setup: &nullctl_core::statlab::PathSetup) -> Result<(f64, f64, f64), LabError> {
    let (c2, radius) = checks::calibration(cfg, setup)?;
    let delta = cfg.delta.unwrap_or_else(|| calibrate_delta(c2, radius, cfg.eps));
    Ok((c2, radius, delta))
}

#[derive(Serialize)]
struct SemilinearJson {
    iterations: usize,
    #[serde(serialize_with = "json_num")]
    x_norm_t: f64,
    #[serde(serialize_with = "json_num")]
    terminal_norm: f64,
    truncation_active: bool,
    #[serde(serialize_with = "json_num")]
    contraction_max: f64,
    #[serde(serialize_with = "json_num")]
    delta: f64,
    #[serde(rename = "R", serialize_with = "json_num")]
    radius: f64,
    #[serde(rename = "C_hat_sq", serialize_with = "json_num")]
    c_hat_sq: f64,
}

/// Single-path Picard run.
pub fn semilinear(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let setup = checks::path_setup(cfg)?;
    let (c2, radius, delta) = resolve_radii(cfg, &setup)?;
    let path = sample_path_stream(cfg.seed, 0, cfg.dt, cfg.horizon)?;
    let y0 = sample_initial_state(cfg.seed, 0, setup.model.eigenvalues(), delta);
    let trunc = TruncationParams::new(radius)?;
    let res = picard_iterate(
        &setup.model,
        &y0,
        &path,
        &setup.nonlinearity,
        &trunc,
        &setup.plan,
        &setup.picard,
    )?;
    let mut t = Table::new(&["iteration", "distance", "ratio"]);
    for (i, d) in res.distances.iter().enumerate() {
        let ratio = if i == 0 { String::new() } else { num(res.ratios[i - 1]) };
        t.push(vec![(i + 1).to_string(), num(*d), ratio]);
    }
    out.csv("picard.csv", &t)?;
    out.csv(
        "trajectory.csv",
        &trajectory_table(&res.solution.trajectory, setup.model.eigenvalues()),
    )?;
    let summary = SemilinearJson {
        iterations: res.iterations,
        x_norm_t: res.x_norm_t,
        terminal_norm: res.solution.terminal_norm,
        truncation_active: res.truncation_active,
        contraction_max: res.max_ratio(),
        delta,
        radius,
        c_hat_sq: c2,
    };
    out.json("semilinear.json", &summary)?;
    let lines = vec![format!(
        "converged in {} iterations, ‖y‖_X = {:.6e} (R = {:.6e}), ‖y(T)‖ = {:.6e}",
        res.iterations, res.x_norm_t, radius, res.solution.terminal_norm
    )];
    finish("semilinear", cfg, out, lines)
}

#[derive(Serialize)]
struct SummaryJson {
    n_paths: usize,
    #[serde(serialize_with = "json_num")]
    p_hat: f64,
    #[serde(serialize_with = "json_num")]
    ci_low: f64,
    #[serde(serialize_with = "json_num")]
    ci_high: f64,
    #[serde(serialize_with = "json_num")]
    eps_predicted: f64,
    #[serde(rename = "C_hat_sq", serialize_with = "json_num")]
    c_hat_sq: f64,
    #[serde(serialize_with = "json_num")]
    delta: f64,
    #[serde(rename = "R", serialize_with = "json_num")]
    radius: f64,
    failures: usize,
}

impl From<&EnsembleSummary> for SummaryJson {
    fn from(s: &EnsembleSummary) -> Self {
        Self {
            n_paths: s.n_paths,
            p_hat: s.p_hat,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            eps_predicted: s.eps_predicted,
            c_hat_sq: s.c_hat_sq,
            delta: s.delta,
            radius: s.radius,
            failures: s.failures,
        }
    }
}

pub fn records_table(res: &EnsembleResult) -> Table {
    let mut t = Table::new(&[
        "path_id",
        "seed",
        "x_norm_T",
        "terminal_norm",
        "cost",
        "iterations",
        "truncation_active",
        "contraction_max",
    ]);
    for r in &res.records {
        t.push(vec![
            r.path_id.to_string(),
            r.seed.to_string(),
            num(r.x_norm_t),
            num(r.terminal_norm),
            num(r.cost),
            r.iterations.to_string(),
            u8::from(r.truncation_active).to_string(),
            num(r.contraction_max),
        ]);
    }
    t
}

/// Statistical run at the calibrated radius.
pub fn ensemble(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let setup = checks::path_setup(cfg)?;
    let (c2, radius, delta) = resolve_radii(cfg, &setup)?;
    let ens = EnsembleConfig {
        n_paths: cfg.n_paths,
        base_seed: cfg.seed,
        delta,
        radius,
        eps: cfg.eps,
    };
    let res = run_ensemble(&setup, &ens)?;
    let summary = summarize(&res, &ens, c2)?;
    out.csv("records.csv", &records_table(&res))?;
    if !res.failures.is_empty() {
        let mut t = Table::new(&["path_id", "error"]);
        for (i, e) in &res.failures {
            t.push(vec![i.to_string(), e.clone()]);
        }
        out.csv("failures.csv", &t)?;
    }
    out.json("summary.json", &SummaryJson::from(&summary))?;
    let tol = 1e-6 * delta.max(1e-12);
    let bound = cfg.eps + 0.05;
    let lines = vec![format!(
        "p̂ = {:.6} [{:.6}, {:.6}], predicted ε = {:.6e}, failures {}, max ‖y(T)‖ = {:.3e}",
        summary.p_hat,
        summary.ci_low,
        summary.ci_high,
        summary.eps_predicted,
        summary.failures,
        summary.max_terminal_norm
    )];
    let report = finish("ensemble", cfg, out, lines)?;
    if summary.exceedance_upper() > bound {
        return Err(LabError::Invariant(format!(
            "exceedance upper bound {:.6} above {bound}",
            summary.exceedance_upper()
        )));
    }
    if summary.max_terminal_norm > tol {
        return Err(LabError::Invariant(format!(
            "terminal norm {:.3e} above {tol:.3e}",
            summary.max_terminal_norm
        )));
    }
    Ok(report)
}

/// The invariant suite, scaled to `n_paths`.
pub fn verify(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let results = checks::run_suite(cfg, &Scale::with_paths(cfg.n_paths))?;
    let mut t = Table::new(&["id", "name", "value", "threshold", "passed", "diagnostic", "detail"]);
    for c in &results {
        t.push(vec![
            c.id.clone(),
            c.name.clone(),
            num(c.value),
            num(c.threshold),
            u8::from(c.passed).to_string(),
            u8::from(c.diagnostic).to_string(),
            c.detail.clone(),
        ]);
    }
    out.csv("verify.csv", &t)?;
    out.json("verify.json", &results)?;
    let lines: Vec<String> = results.iter().map(CheckOutcome::line).collect();
    let failed: Vec<&str> = results
        .iter()
        .filter(|c| !c.passed && !c.diagnostic)
        .map(|c| c.name.as_str())
        .collect();
    let report = finish("verify", cfg, out, lines)?;
    if !failed.is_empty() {
        for l in &report.lines {
            println!("{l}");
        }
        return Err(LabError::Invariant(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(report)
}

fn read_table(dir: &Path, name: &str) -> Result<Option<Table>, LabError> {
    let p = dir.join(name);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(Table::from_csv(&std::fs::read(p)?)?))
}

/// SVG plots from whatever CSVs earlier commands left in `dir`.
pub fn report(cfg: &Config, dir: &Path) -> Result<Report, LabError> {
    let mut out = OutputSet::new(dir)?;
    let mut lines = Vec::new();
    let zip = |x: Vec<f64>, y: Vec<f64>| x.into_iter().zip(y).collect::<Vec<_>>();
    if let Some(t) = read_table(dir, "trajectory.csv")? {
        let time = t.column("t")?;
        let chart = Chart {
            title: "trajectory norms".into(),
            x_label: "t".into(),
            y_label: "norm".into(),
            log_y: true,
            series: vec![
                Series {
                    label: "L²".into(),
                    points: zip(time.clone(), t.column("l2")?),
                },
                Series {
                    label: "H¹₀".into(),
                    points: zip(time, t.column("h1")?),
                },
            ],
        };
        out.write("trajectory.svg", chart.render().as_bytes())?;
        lines.push("trajectory.svg".to_string());
    }
    if let Some(t) = read_table(dir, "cost_curve.csv")? {
        let inv: Vec<f64> = t.column("T")?.iter().map(|h| 1.0 / h).collect();
        let chart = Chart {
            title: "control cost against 1/T".into(),
            x_label: "1/T".into(),
            y_label: "median cost".into(),
            log_y: true,
            series: vec![Series {
                label: "cost".into(),
                points: zip(inv, t.column("cost_median")?),
            }],
        };
        out.write("cost_curve.svg", chart.render().as_bytes())?;
        lines.push("cost_curve.svg".to_string());
    }
    if let Some(t) = read_table(dir, "weights.csv")? {
        let time = t.column("t")?;
        let series = ["gamma", "rho0", "rho", "rho_hat"]
            .iter()
            .map(|c| -> Result<Series, LabError> {
                Ok(Series {
                    label: c.to_string(),
                    points: zip(time.clone(), t.column(c)?),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let chart = Chart {
            title: "weight profiles".into(),
            x_label: "t".into(),
            y_label: "weight".into(),
            log_y: true,
            series,
        };
        out.write("weights.svg", chart.render().as_bytes())?;
        lines.push("weights.svg".to_string());
    }
    if let Some(t) = read_table(dir, "obs_curve.csv")? {
        let chart = Chart {
            title: "observability constant against √μ".into(),
            x_label: "√μ".into(),
            y_label: "κ".into(),
            log_y: true,
            series: vec![Series {
                label: "κ(μ, τ)".into(),
                points: zip(t.column("sqrt_mu")?, t.column("kappa")?),
            }],
        };
        out.write("obs_curve.svg", chart.render().as_bytes())?;
        lines.push("obs_curve.svg".to_string());
    }
    if lines.is_empty() {
        return Err(LabError::Usage(format!(
            "no trajectory.csv, cost_curve.csv, weights.csv or obs_curve.csv in {}",
            dir.display()
        )));
    }
    finish("report", cfg, out, lines)
}
