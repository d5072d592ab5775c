use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stableplan::config::{ExperimentConfig, OracleKind};
use stableplan::harness::{self, Mode};
use stableplan::stability::{RhoVariant, VerdictStatus};
use stableplan::Error;

/// Stability-aware sparse-sampling planning on queueing models.
#[derive(Parser, Debug)]
#[command(name = "stableplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured trials and write trajectories and reports.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the stability report from a run directory.
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        /// Report path; defaults to <dir>/analysis.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "rho-variant")]
        rho_variant: Option<RhoVariant>,
    },
    /// Print the parameter sheet for a configuration.
    Params {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulate with the δ-halving tuner attached.
    Tune {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "budget-cap")]
    budget_cap: Option<u64>,
    #[arg(long)]
    oracle: Option<OracleKind>,
    #[arg(long = "rho-variant")]
    rho_variant: Option<RhoVariant>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(x) = self.seed {
            cfg.run.seed = x;
        }
        if let Some(x) = self.trials {
            cfg.run.trials = x;
        }
        if let Some(x) = self.horizon {
            cfg.run.horizon = x;
        }
        if let Some(x) = &self.out {
            cfg.run.out = Some(x.display().to_string());
        }
        if let Some(x) = self.budget_cap {
            cfg.run.budget_cap = Some(x);
        }
        if let Some(x) = self.oracle {
            cfg.oracle.kind = x;
        }
        if let Some(x) = self.rho_variant {
            cfg.analysis.rho_variant = x;
        }
    }
}

fn load(path: &Path, overrides: &Overrides, mode: Mode) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    overrides.apply(&mut cfg);
    // the echoed config records that the tuner ran
    if mode == Mode::Tune {
        cfg.adaptive.enabled = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn warn_if_inconclusive(status: VerdictStatus, reason: &str) {
    if status == VerdictStatus::Inconclusive {
        eprintln!("warning: verdict inconclusive: {reason}");
    }
}

fn simulate(path: &Path, overrides: &Overrides, mode: Mode) -> Result<(), Error> {
    let cfg = load(path, overrides, mode)?;
    let out = harness::run_experiment(&cfg, mode)?;
    let dir = PathBuf::from(cfg.run.out.clone().unwrap_or_else(|| "out".into()));
    harness::write_outputs(&dir, &cfg, &out)?;
    let v = &out.report.verdict;
    println!(
        "verdict: {:?} ({}) over {} complete trials, {} failed; {} simulator calls; output in {}",
        v.status,
        v.scope,
        out.summary.complete_trials,
        out.summary.failed_trials,
        out.summary.total_samples,
        dir.display()
    );
    println!("{}", v.reason);
    warn_if_inconclusive(v.status, &v.reason);
    match out.first_error {
        Some(e) => {
            eprintln!("warning: {} trial(s) stopped early; first: {e}", out.summary.failed_trials);
            Err(e)
        }
        None => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, overrides } => simulate(&config, &overrides, Mode::Run),
        Command::Tune { config, overrides } => simulate(&config, &overrides, Mode::Tune),
        Command::Params { config, overrides } => {
            let cfg = load(&config, &overrides, Mode::Run)?;
            print!("{}", harness::params(&cfg)?.render());
            Ok(())
        }
        Command::Analyze {
            dir,
            theta,
            out,
            rho_variant,
        } => {
            let mut cfg = ExperimentConfig::load(&dir.join(harness::CONFIG_FILE))?;
            if let Some(v) = rho_variant {
                cfg.analysis.rho_variant = v;
            }
            let trajectories = harness::read_trajectories(&dir)?;
            let report = harness::report_for(&trajectories, &cfg, theta)?;
            let path = out.unwrap_or_else(|| dir.join("analysis.json"));
            std::fs::write(&path, harness::to_json(&report)?)?;
            let v = &report.verdict;
            println!("verdict: {:?} ({}); report in {}", v.status, v.scope, path.display());
            println!("{}", v.reason);
            warn_if_inconclusive(v.status, &v.reason);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
