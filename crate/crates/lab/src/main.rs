use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nullctl::commands;
use nullctl::config::{Config, RawConfig};
use nullctl::LabError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Burgers,
    AllenCahn,
    Linear,
}

impl Preset {
    fn key(self) -> &'static str {
        match self {
            Preset::Burgers => "burgers",
            Preset::AllenCahn => "allen-cahn",
            Preset::Linear => "linear",
        }
    }
}

/// Pathwise null control of stochastic heat equations.
#[derive(Debug, Parser)]
#[command(name = "nullctl", version)]
struct Cli {
    /// Sectioned key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed of the Brownian paths.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Retained sine modes (the synthesis grid grows to at least twice this).
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// Time step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Nonlinearity preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Uncontrolled linear SPDE from a random unit state.
    Simulate,
    /// Lebeau–Robbiano null control of the linear equation.
    ControlLinear,
    /// Control cost against the horizon, with the c0 + c1/T fit.
    CostCurve,
    /// Observability constant against the spectral cutoff.
    ObsCurve,
    /// Source-term method with decaying demo sources.
    SourceDemo,
    /// Single-path Picard iteration for the truncated nonlinearity.
    Semilinear,
    /// Monte-Carlo check of the statistical guarantee.
    Ensemble,
    /// Run the invariant suite.
    Verify,
    /// Render SVG plots from CSVs in the output directory.
    Report,
    /// Print the documented default configuration.
    Defaults,
}

fn load(cli: &Cli) -> Result<Config, LabError> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    if let Some(s) = cli.seed {
        raw.set("noise", "seed", s.to_string());
    }
    if let Some(n) = cli.paths {
        raw.set("ensemble", "n_paths", n.to_string());
    }
    if let Some(dt) = cli.dt {
        raw.set("domain", "dt", dt.to_string());
    }
    if let Some(p) = cli.preset {
        raw.set("nonlinearity", "preset", p.key());
    }
    if let Some(m) = cli.modes {
        let grid = Config::resolve(&raw).map(|c| c.n_grid).unwrap_or(2 * m);
        raw.set("domain", "n_modes", m.to_string());
        raw.set("domain", "n_grid", grid.max(2 * m).to_string());
    }
    Config::resolve(&raw)
}

fn run(cli: &Cli) -> Result<(), LabError> {
    if let Command::Defaults = cli.command {
        print!("{}", nullctl::config::default_file());
        return Ok(());
    }
    let cfg = load(cli)?;
    let dir = &cli.out;
    let report = match cli.command {
        Command::Simulate => commands::simulate(&cfg, dir),
        Command::ControlLinear => commands::control_linear(&cfg, dir),
        Command::CostCurve => commands::cost_curve(&cfg, dir),
        Command::ObsCurve => commands::obs_curve(&cfg, dir),
        Command::SourceDemo => commands::source_demo(&cfg, dir),
        Command::Semilinear => commands::semilinear(&cfg, dir),
        Command::Ensemble => commands::ensemble(&cfg, dir),
        Command::Verify => commands::verify(&cfg, dir),
        Command::Report => commands::report(&cfg, dir),
        Command::Defaults => unreachable!(),
    }?;
    for l in &report.lines {
        println!("{l}");
    }
    println!("wrote {} in {}", report.outputs.join(", "), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nullctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
