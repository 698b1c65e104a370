//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [domain]
//! n_modes = 32
//! ```
//!
//! Every key has a default (see [`KEYS`]); unknown sections or keys,
//! duplicates and malformed values are rejected. The canonical rendering
//! ([`Config::canonical`]) lists every key in table order and is what the
//! manifest hashes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nullctl_core::sde::HeatModel;
use nullctl_core::semilinear::{NonlinearitySpec, PicardConfig};
use nullctl_core::source_method::SteeringMode;
use nullctl_core::spectral::{ControlRegion, SpectralGrid};
use nullctl_core::weights::{WeightParams, Weights};

use crate::LabError;

/// `(section, key, default, description)`.
pub const KEYS: &[(&str, &str, &str, &str)] = &[
    ("domain", "length", "1", "interval length L"),
    ("domain", "n_modes", "32", "retained sine modes"),
    (
        "domain",
        "n_grid",
        "64",
        "interior grid nodes for synthesis (at least 2·n_modes)",
    ),
    ("domain", "control_lo", "0.3", "left end of the control region"),
    ("domain", "control_hi", "0.8", "right end of the control region"),
    ("domain", "horizon", "1", "final time T"),
    ("domain", "dt", "0.00048828125", "time step (T/dt must be an integer)"),
    ("noise", "a", "0.5", "multiplicative noise intensity"),
    ("noise", "seed", "1", "base seed of the Brownian paths"),
    ("nonlinearity", "preset", "burgers", "burgers | allen-cahn | linear"),
    ("nonlinearity", "alpha", "preset", "coefficient of y^p"),
    ("nonlinearity", "beta", "preset", "coefficient of y^q y_x"),
    ("nonlinearity", "gamma", "preset", "coefficient of y^r in the diffusion"),
    ("nonlinearity", "p", "preset", "exponent p > 1"),
    ("nonlinearity", "q", "preset", "exponent q ≥ 1"),
    ("nonlinearity", "r", "preset", "exponent r > 1"),
    ("nonlinearity", "linear_shift", "preset", "extra linear drift c·y"),
    ("weights", "s", "auto", "weight exponent; auto = min(p, q + 1, r)"),
    ("weights", "big_q", "1.2", "block ratio base Q in (1, 2^{1/s})"),
    ("weights", "big_p", "3", "exponent P > Q^s/(2 − Q^s)"),
    ("weights", "zeta", "2.9", "ζ in ((1 + P)Q^s/2, P)"),
    ("weights", "m_cost", "5", "control-cost constant M_cost"),
    ("lr", "m_spec", "10", "spectral cutoff base M_spec (μ_k = M_spec·4^k)"),
    ("lr", "k_max", "6", "number of active windows"),
    (
        "lr",
        "steering",
        "direct",
        "block steering in the source method: direct | lr",
    ),
    ("lr", "min_block_steps", "16", "shortest source block in time steps"),
    ("lr", "cost_horizons", "0.25,0.5,1", "horizons of the cost curve"),
    ("lr", "cost_steps", "2048", "time steps per cost-curve horizon"),
    ("lr", "obs_tau", "0.25", "observation time of the observability curve"),
    ("lr", "obs_modes", "8", "cutoffs λ_1..λ_m of the observability curve"),
    ("ensemble", "n_paths", "100", "ensemble size"),
    ("ensemble", "eps", "0.05", "target exceedance probability ε"),
    (
        "ensemble",
        "delta",
        "auto",
        "initial-data radius; auto = calibrated from ε",
    ),
    (
        "ensemble",
        "radius",
        "auto",
        "truncation radius R; auto = smallness policy",
    ),
    (
        "ensemble",
        "calibration_paths",
        "40",
        "linear-regime paths used to estimate Ĉ²",
    ),
    ("ensemble", "max_iter", "20", "Picard iteration cap"),
    ("ensemble", "tol", "1e-8", "relative Picard tolerance"),
];

/// Raw key/value pairs after strict parsing, keyed by `section.key`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, k, _, _)| *s == section && *k == key)
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut values = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| LabError::Config(format!("line {line_no}: malformed section header")))?
                    .trim();
                if !KEYS.iter().any(|(s, _, _, _)| *s == name) {
                    return Err(LabError::Config(format!("line {line_no}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {line_no}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| LabError::Config(format!("line {line_no}: key `{k}` outside a section")))?;
            if !known(sec, k) {
                return Err(LabError::Config(format!(
                    "line {line_no}: unknown key `{k}` in [{sec}]"
                )));
            }
            if v.is_empty() {
                return Err(LabError::Config(format!("line {line_no}: empty value for `{k}`")));
            }
            if values.insert(format!("{sec}.{k}"), v.to_string()).is_some() {
                return Err(LabError::Config(format!(
                    "line {line_no}: duplicate key `{k}` in [{sec}]"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        debug_assert!(known(section, key));
        self.values.insert(format!("{section}.{key}"), value.into());
    }

    fn get(&self, section: &str, key: &str) -> &str {
        if let Some(v) = self.values.get(&format!("{section}.{key}")) {
            return v;
        }
        KEYS.iter()
            .find(|(s, k, _, _)| *s == section && *k == key)
            .map(|(_, _, d, _)| *d)
            .expect("key listed in KEYS")
    }
}

fn bad(section: &str, key: &str, value: &str, what: &str) -> LabError {
    LabError::Config(format!("[{section}] {key} = {value}: {what}"))
}

fn real(raw: &RawConfig, section: &str, key: &str) -> Result<f64, LabError> {
    let v = raw.get(section, key);
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(section, key, v, "expected a finite number")),
    }
}

fn int(raw: &RawConfig, section: &str, key: &str) -> Result<usize, LabError> {
    let v = raw.get(section, key);
    v.parse::<usize>()
        .map_err(|_| bad(section, key, v, "expected a nonnegative integer"))
}

fn auto_real(raw: &RawConfig, section: &str, key: &str) -> Result<Option<f64>, LabError> {
    if raw.get(section, key) == "auto" {
        Ok(None)
    } else {
        real(raw, section, key).map(Some)
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub length: f64,
    pub n_modes: usize,
    pub n_grid: usize,
    pub control: (f64, f64),
    pub horizon: f64,
    pub dt: f64,
    pub a: f64,
    pub seed: u64,
    pub preset: String,
    pub nonlinearity: NonlinearitySpec,
    pub weights: WeightParams,
    pub m_spec: f64,
    pub k_max: usize,
    pub steering: SteeringMode,
    pub min_block_steps: usize,
    pub cost_horizons: Vec<f64>,
    pub cost_steps: usize,
    pub obs_tau: f64,
    pub obs_modes: usize,
    pub n_paths: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    pub radius: Option<f64>,
    pub calibration_paths: usize,
    pub picard: PicardConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::resolve(&RawConfig::default()).expect("defaults resolve")
    }
}

impl Config {
    pub fn resolve(raw: &RawConfig) -> Result<Self, LabError> {
        let preset = raw.get("nonlinearity", "preset").to_string();
        let base = NonlinearitySpec::preset(&preset).ok_or_else(|| {
            bad(
                "nonlinearity",
                "preset",
                &preset,
                "expected burgers, allen-cahn or linear",
            )
        })?;
        let over = |key: &str, d: f64| -> Result<f64, LabError> {
            if raw.get("nonlinearity", key) == "preset" {
                Ok(d)
            } else {
                real(raw, "nonlinearity", key)
            }
        };
        let nonlinearity = NonlinearitySpec {
            alpha: over("alpha", base.alpha)?,
            beta: over("beta", base.beta)?,
            gamma: over("gamma", base.gamma)?,
            p: over("p", base.p)?,
            q: over("q", base.q)?,
            r: over("r", base.r)?,
            linear_shift: over("linear_shift", base.linear_shift)?,
        };
        nonlinearity
            .validate()
            .map_err(|e| LabError::Config(format!("[nonlinearity] {e}")))?;

        let horizon = real(raw, "domain", "horizon")?;
        let weights = WeightParams {
            s: auto_real(raw, "weights", "s")?.unwrap_or_else(|| nonlinearity.s()),
            big_q: real(raw, "weights", "big_q")?,
            big_p: real(raw, "weights", "big_p")?,
            zeta: real(raw, "weights", "zeta")?,
            m_cost: real(raw, "weights", "m_cost")?,
            horizon,
        };
        let steering = match raw.get("lr", "steering") {
            "direct" => SteeringMode::DirectHum,
            "lr" => SteeringMode::Lr {
                m_spec: real(raw, "lr", "m_spec")?,
                k_max: int(raw, "lr", "k_max")?,
            },
            v => return Err(bad("lr", "steering", v, "expected direct or lr")),
        };
        let cost_horizons = raw
            .get("lr", "cost_horizons")
            .split(',')
            .map(|v| match v.trim().parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(bad("lr", "cost_horizons", v, "expected positive numbers")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let seed_text = raw.get("noise", "seed");
        let seed = seed_text
            .parse::<u64>()
            .map_err(|_| bad("noise", "seed", seed_text, "expected an unsigned 64-bit integer"))?;
        let cfg = Self {
            length: real(raw, "domain", "length")?,
            n_modes: int(raw, "domain", "n_modes")?,
            n_grid: int(raw, "domain", "n_grid")?,
            control: (real(raw, "domain", "control_lo")?, real(raw, "domain", "control_hi")?),
            horizon,
            dt: real(raw, "domain", "dt")?,
            a: real(raw, "noise", "a")?,
            seed,
            preset,
            nonlinearity,
            weights,
            m_spec: real(raw, "lr", "m_spec")?,
            k_max: int(raw, "lr", "k_max")?,
            steering,
            min_block_steps: int(raw, "lr", "min_block_steps")?,
            cost_horizons,
            cost_steps: int(raw, "lr", "cost_steps")?,
            obs_tau: real(raw, "lr", "obs_tau")?,
            obs_modes: int(raw, "lr", "obs_modes")?,
            n_paths: int(raw, "ensemble", "n_paths")?,
            eps: real(raw, "ensemble", "eps")?,
            delta: auto_real(raw, "ensemble", "delta")?,
            radius: auto_real(raw, "ensemble", "radius")?,
            calibration_paths: int(raw, "ensemble", "calibration_paths")?,
            picard: PicardConfig {
                max_iter: int(raw, "ensemble", "max_iter")?,
                tol: real(raw, "ensemble", "tol")?,
            },
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), LabError> {
        let steps = self.horizon / self.dt;
        if self.dt <= 0.0 || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(LabError::Config(format!(
                "[domain] dt = {} must divide horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.n_paths == 0 || self.calibration_paths == 0 {
            return Err(LabError::Config("[ensemble] path counts must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(LabError::Config("[ensemble] eps must lie in (0, 1)".into()));
        }
        if self.cost_horizons.len() < 3 {
            return Err(LabError::Config(
                "[lr] cost_horizons needs at least three values".into(),
            ));
        }
        Weights::new(self.weights).map_err(|e| LabError::Config(format!("[weights] {e}")))?;
        self.model()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SpectralGrid, LabError> {
        SpectralGrid::new(self.length, self.n_modes, self.n_grid).map_err(|e| LabError::Config(format!("[domain] {e}")))
    }

    pub fn model(&self) -> Result<HeatModel, LabError> {
        let region = ControlRegion::new(self.control.0, self.control.1, self.length)
            .map_err(|e| LabError::Config(format!("[domain] {e}")))?;
        HeatModel::new(self.grid()?, region, self.a).map_err(|e| LabError::Config(format!("[domain] {e}")))
    }

    pub fn weights(&self) -> Weights {
        Weights::new(self.weights).expect("validated on resolve")
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, _, _) in KEYS {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {}", self.value_text(section, key));
        }
        out
    }

    fn value_text(&self, section: &str, key: &str) -> String {
        let n = crate::output::num;
        let nl = &self.nonlinearity;
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), n);
        match (section, key) {
            ("domain", "length") => n(self.length),
            ("domain", "n_modes") => self.n_modes.to_string(),
            ("domain", "n_grid") => self.n_grid.to_string(),
            ("domain", "control_lo") => n(self.control.0),
            ("domain", "control_hi") => n(self.control.1),
            ("domain", "horizon") => n(self.horizon),
            ("domain", "dt") => n(self.dt),
            ("noise", "a") => n(self.a),
            ("noise", "seed") => self.seed.to_string(),
            ("nonlinearity", "preset") => self.preset.clone(),
            ("nonlinearity", "alpha") => n(nl.alpha),
            ("nonlinearity", "beta") => n(nl.beta),
            ("nonlinearity", "gamma") => n(nl.gamma),
            ("nonlinearity", "p") => n(nl.p),
            ("nonlinearity", "q") => n(nl.q),
            ("nonlinearity", "r") => n(nl.r),
            ("nonlinearity", "linear_shift") => n(nl.linear_shift),
            ("weights", "s") => n(self.weights.s),
            ("weights", "big_q") => n(self.weights.big_q),
            ("weights", "big_p") => n(self.weights.big_p),
            ("weights", "zeta") => n(self.weights.zeta),
            ("weights", "m_cost") => n(self.weights.m_cost),
            ("lr", "m_spec") => n(self.m_spec),
            ("lr", "k_max") => self.k_max.to_string(),
            ("lr", "steering") => match self.steering {
                SteeringMode::DirectHum => "direct".into(),
                SteeringMode::Lr { .. } => "lr".into(),
            },
            ("lr", "min_block_steps") => self.min_block_steps.to_string(),
            ("lr", "cost_horizons") => self.cost_horizons.iter().map(|&h| n(h)).collect::<Vec<_>>().join(","),
            ("lr", "cost_steps") => self.cost_steps.to_string(),
            ("lr", "obs_tau") => n(self.obs_tau),
            ("lr", "obs_modes") => self.obs_modes.to_string(),
            ("ensemble", "n_paths") => self.n_paths.to_string(),
            ("ensemble", "eps") => n(self.eps),
            ("ensemble", "delta") => opt(self.delta),
            ("ensemble", "radius") => opt(self.radius),
            ("ensemble", "calibration_paths") => self.calibration_paths.to_string(),
            ("ensemble", "max_iter") => self.picard.max_iter.to_string(),
            ("ensemble", "tol") => n(self.picard.tol),
            _ => unreachable!("key {section}.{key} missing from value_text"),
        }
    }
}

/// The documented default file: every key, its default and a description.
pub fn default_file() -> String {
    let mut out = String::new();
    let mut current = "";
    for (section, key, default, doc) in KEYS {
        if *section != current {
            if !current.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            current = section;
        }
        let _ = writeln!(out, "# {doc}");
        let _ = writeln!(out, "{key} = {default}");
    }
    out
}
