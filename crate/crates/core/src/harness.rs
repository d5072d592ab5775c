//! Experiment orchestration: seeded parallel trials, persistence and reports.
//!
//! An output directory holds
//!
//! ```text
//! config.toml                 resolved configuration
//! trajectories/trial_0000.csv one file per trial
//! report.json                 stability report over complete trials
//! summary.json                parameters, sample accounting, per-trial status
//! ```
//!
//! Every file is a function of the configuration alone: trials draw from
//! `seed → trial → step` sub-streams and are written in trial order, so the
//! worker count never changes an output byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{near_stability_metric, run_adaptive_partial};
use crate::config::{ExperimentConfig, ParamSource, PolicyKind, ResolvedOracle};
use crate::control::{
    simulate, OracleParams, PlannerPolicy, ServeLongestPolicy, StepPolicy, UniformPolicy,
};
use crate::error::{Error, Result};
use crate::mdp::{GenerativeModel, StreamKey};
use crate::oracle::{eps_of_delta, grid_params, horizon_for, sparse_params};
use crate::policy::{kappa_bound, tau_terms, TauTerms};
use crate::stability::{
    hajek_constants_with, stability_verdict, HajekConstants, StabilityReport, VerdictStatus,
};
use crate::trajectory::{TrajectoryHeader, TrajectoryRecord, TrialStatus};

pub const SUMMARY_SCHEMA: &str = "stableplan-summary";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Fixed planner; adaptive if the config enables it.
    Run,
    /// Always attach the δ-halving tuner.
    Tune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub complete: bool,
    pub failure: Option<String>,
    pub steps: u64,
    pub samples_used: u64,
    pub halving_count: Option<u32>,
    pub halving_times: Option<Vec<u64>>,
    pub final_delta: Option<f64>,
    pub near_stability: Option<f64>,
}

/// Planner settings in force after `halvings` halvings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaLevel {
    pub halvings: u32,
    pub delta: f64,
    pub tau: f64,
    pub oracle: ResolvedOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub environment: String,
    pub adaptive: bool,
    pub policy: PolicyKind,
    pub tau: Option<f64>,
    pub oracle: Option<ResolvedOracle>,
    pub delta_levels: Vec<DeltaLevel>,
    pub budget_cap: Option<u64>,
    pub total_samples: u64,
    pub complete_trials: u64,
    pub failed_trials: u64,
    pub verdict: VerdictStatus,
    pub trials: Vec<TrialSummary>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub trajectories: Vec<TrajectoryRecord>,
    pub report: StabilityReport,
    pub summary: RunSummary,
    /// First trial failure, kept for the exit code.
    pub first_error: Option<Error>,
}

impl ExperimentConfig {
    /// Hash over settings that affect results; `workers` and `out` are excluded.
    pub fn result_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.run.workers = 1;
        c.run.out = None;
        c.hash()
    }
}

fn build_policy(
    cfg: &ExperimentConfig,
    model: &dyn GenerativeModel,
    delta: f64,
    tau: f64,
) -> Result<Box<dyn StepPolicy>> {
    Ok(match cfg.policy.kind {
        PolicyKind::Boltzmann => {
            let oracle = cfg.resolve_oracle(model, delta)?;
            Box::new(PlannerPolicy::new(oracle.effective, tau, delta)?)
        }
        PolicyKind::Uniform => Box::new(UniformPolicy),
        PolicyKind::ServeLongest => Box::new(ServeLongestPolicy),
    })
}

/// Runs all trials in memory; see [`write_outputs`] for persistence.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<RunOutput> {
    cfg.validate()?;
    let model = cfg.environment.build()?;
    let model: &dyn GenerativeModel = model.as_ref();
    let initial = cfg.environment.initial_state(model.dimension())?;
    let spec = cfg.lyapunov.spec();
    let adaptive = mode == Mode::Tune || cfg.adaptive.enabled;
    let hash = cfg.result_hash()?;
    let budget = cfg.run.budget_cap.unwrap_or(u64::MAX);
    let boltzmann = cfg.policy.kind == PolicyKind::Boltzmann;
    let fixed_tau = if boltzmann && !adaptive {
        Some(cfg.tau(model)?)
    } else {
        None
    };
    let master = StreamKey::new(cfg.run.seed);
    let header = |trial: u64| TrajectoryHeader {
        environment: model.name().to_string(),
        trial,
        seed: cfg.run.seed,
        horizon: cfg.run.horizon,
        dimension: model.dimension(),
        config_hash: hash.clone(),
        status: TrialStatus::Complete,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    type TrialResult = (TrajectoryRecord, Option<Error>, Option<crate::adaptive::TunerState>);
    let results: Vec<Result<TrialResult>> = pool.install(|| {
        (0..cfg.run.trials)
            .into_par_iter()
            .map(|trial| -> Result<TrialResult> {
                let key = master.child(trial);
                if adaptive {
                    let mut factory = |delta: f64| build_policy(cfg, model, delta, delta.sqrt());
                    let out = run_adaptive_partial(
                        model,
                        &mut factory,
                        &spec,
                        initial.clone(),
                        cfg.run.horizon,
                        &key,
                        cfg.adaptive.tuner(),
                        budget,
                        header(trial),
                    )?;
                    Ok((out.record, out.error, Some(out.tuner)))
                } else {
                    let mut policy = build_policy(cfg, model, cfg.oracle.delta, fixed_tau.unwrap_or(1.0))?;
                    let out = simulate(
                        model,
                        policy.as_mut(),
                        &spec,
                        initial.clone(),
                        cfg.run.horizon,
                        &key,
                        budget,
                        header(trial),
                    );
                    Ok((out.record, out.error, None))
                }
            })
            .collect()
    });

    let mut trajectories = Vec::with_capacity(results.len());
    let mut trials = Vec::with_capacity(results.len());
    let mut first_error = None;
    let mut max_halvings = 0;
    for result in results {
        let (record, error, tuner) = result?;
        let near = match &tuner {
            Some(t) if error.is_none() => near_stability_metric(&record, t.t0).ok(),
            _ => None,
        };
        if let Some(t) = &tuner {
            max_halvings = max_halvings.max(t.halving_count());
        }
        trials.push(TrialSummary {
            trial: record.header.trial,
            complete: error.is_none(),
            failure: error.as_ref().map(|e| e.to_string()),
            steps: record.len().saturating_sub(1) as u64,
            samples_used: record.total_samples(),
            halving_count: tuner.as_ref().map(|t| t.halving_count()),
            halving_times: tuner.as_ref().map(|t| t.halving_times()),
            final_delta: tuner.as_ref().map(|t| t.delta()),
            near_stability: near,
        });
        if first_error.is_none() {
            first_error = error;
        }
        trajectories.push(record);
    }

    let report = report_for(&trajectories, cfg, None)?;
    let delta_levels = if adaptive {
        // levels the formulas reject show up as trial failures instead
        (0..=max_halvings)
            .filter_map(|k| {
                let delta = 0.5f64.powi(k as i32);
                let oracle = cfg.resolve_oracle(model, delta).ok()?;
                Some(DeltaLevel {
                    halvings: k,
                    delta,
                    tau: delta.sqrt(),
                    oracle,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let oracle = if boltzmann && !adaptive {
        Some(cfg.resolve_oracle(model, cfg.oracle.delta)?)
    } else {
        None
    };
    let failed = trials.iter().filter(|t| !t.complete).count() as u64;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: hash,
        environment: model.name().to_string(),
        adaptive,
        policy: cfg.policy.kind,
        tau: fixed_tau,
        oracle,
        delta_levels,
        budget_cap: cfg.run.budget_cap,
        total_samples: trials.iter().map(|t| t.samples_used).sum(),
        complete_trials: trials.len() as u64 - failed,
        failed_trials: failed,
        verdict: report.verdict.status,
        trials,
    };
    Ok(RunOutput {
        trajectories,
        report,
        summary,
        first_error,
    })
}

/// Stability report over the complete trajectories.
pub fn report_for(
    trajectories: &[TrajectoryRecord],
    cfg: &ExperimentConfig,
    theta: Option<f64>,
) -> Result<StabilityReport> {
    let complete: Vec<TrajectoryRecord> = trajectories
        .iter()
        .filter(|t| t.header.status.is_complete())
        .cloned()
        .collect();
    let mut options = cfg.verdict_options();
    if let Some(theta) = theta {
        options.theta = theta;
    }
    stability_verdict(&complete, &cfg.lyapunov.spec(), &options)
}

pub fn trajectory_path(dir: &Path, trial: u64) -> PathBuf {
    dir.join(TRAJECTORY_DIR).join(format!("trial_{trial:04}.csv"))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::contract(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir.join(TRAJECTORY_DIR))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    for t in &out.trajectories {
        t.write_csv(&trajectory_path(dir, t.header.trial))?;
    }
    fs::write(dir.join(REPORT_FILE), to_json(&out.report)?)?;
    fs::write(dir.join(SUMMARY_FILE), to_json(&out.summary)?)?;
    Ok(())
}

/// Reads every trajectory file of a run directory, in name order.
pub fn read_trajectories(dir: &Path) -> Result<Vec<TrajectoryRecord>> {
    let tdir = dir.join(TRAJECTORY_DIR);
    if !tdir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&tdir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    paths.sort();
    let records: Vec<TrajectoryRecord> = paths
        .iter()
        .map(|p| TrajectoryRecord::read_csv(p))
        .collect::<Result<_>>()?;
    if let Some(first) = records.first() {
        if let Some(bad) = records.iter().find(|r| r.header.dimension != first.header.dimension) {
            return Err(Error::usage(format!(
                "trial {} has dimension {}, trial {} has {}",
                bad.header.trial, bad.header.dimension, first.header.trial, first.header.dimension
            )));
        }
    }
    Ok(records)
}

/// Recomputes the report from a run directory's files alone.
pub fn analyze(dir: &Path, theta: Option<f64>) -> Result<StabilityReport> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let trajectories = read_trajectories(dir)?;
    report_for(&trajectories, &cfg, theta)
}

/// Parameter values at the configured accuracy, with cost projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSheet {
    pub delta: f64,
    pub gamma: f64,
    pub action_count: usize,
    pub dimension: usize,
    pub r_max: f64,
    pub v_max: f64,
    pub horizon: Option<u32>,
    pub width_vanilla: Option<u64>,
    pub width_vanilla_raw: Option<f64>,
    /// `(|A|C)^H` for the vanilla formulas.
    pub vanilla_calls: Option<f64>,
    pub epsilon: Option<f64>,
    pub width_grid: Option<u64>,
    pub grid_bound: Option<f64>,
    pub grid_call_ceiling: Option<f64>,
    pub formula_error: Option<String>,
    /// The planner's configured parameters and their worst-case call count.
    pub effective: Option<OracleParams>,
    pub effective_calls: Option<f64>,
    pub tau: Option<f64>,
    pub tau_terms: Option<TauTerms>,
    pub q_error: f64,
    pub kappa: Option<f64>,
    pub hajek: Option<HajekConstants>,
    pub budget_cap: Option<u64>,
    /// Projections above the budget cap.
    pub over_budget: Vec<String>,
}

fn projected(params: &OracleParams, action_count: usize) -> f64 {
    match params {
        OracleParams::Vanilla(p) => p.projected_calls_f64(action_count),
        OracleParams::Grid(p) => {
            (action_count as f64 * p.width as f64).powi(p.horizon as i32).min(p.call_ceiling(action_count))
        }
        OracleParams::Flat => 0.0,
    }
}

pub fn params(cfg: &ExperimentConfig) -> Result<ParamSheet> {
    let model = cfg.environment.build()?;
    let model: &dyn GenerativeModel = model.as_ref();
    let delta = cfg.oracle.delta;
    let a = model.action_count();
    let (gamma, d) = (model.gamma(), model.dimension());
    let mut sheet = ParamSheet {
        delta,
        gamma,
        action_count: a,
        dimension: d,
        r_max: model.r_max(),
        v_max: model.v_max(),
        horizon: None,
        width_vanilla: None,
        width_vanilla_raw: None,
        vanilla_calls: None,
        epsilon: None,
        width_grid: None,
        grid_bound: None,
        grid_call_ceiling: None,
        formula_error: None,
        effective: None,
        effective_calls: None,
        tau: None,
        tau_terms: None,
        q_error: eps_of_delta(delta, model.r_max(), gamma),
        kappa: None,
        hajek: None,
        budget_cap: cfg.run.budget_cap,
        over_budget: Vec::new(),
    };
    let formulas = (|| -> Result<()> {
        sheet.horizon = Some(horizon_for(delta, gamma)?);
        let sp = sparse_params(delta, gamma, a)?;
        sheet.width_vanilla = Some(sp.width);
        sheet.width_vanilla_raw = Some(sp.width_raw);
        sheet.vanilla_calls = Some(sp.projected_calls_f64(a));
        let gp = grid_params(delta, gamma, cfg.oracle.zeta, d, model.v_max(), a, cfg.lyapunov.nu_prime)?;
        sheet.epsilon = Some(gp.epsilon);
        sheet.width_grid = Some(gp.width);
        sheet.grid_bound = Some(gp.grid_bound);
        sheet.grid_call_ceiling = Some(gp.call_ceiling(a));
        Ok(())
    })();
    if let Err(e) = formulas {
        sheet.formula_error = Some(e.to_string());
    }
    if cfg.oracle.source == ParamSource::Override {
        let eff = cfg.override_oracle(model)?;
        sheet.effective_calls = Some(projected(&eff, a));
        sheet.effective = Some(eff);
    }
    let p = &cfg.policy;
    if let (Some(alpha), Some(nu), Some(dm)) = (p.alpha, p.nu, p.delta_min) {
        sheet.tau_terms = tau_terms(alpha, nu, gamma, model.r_max(), a, dm).ok();
    }
    sheet.tau = cfg.tau(model).ok();
    if let (Some(tau), Some(dm)) = (sheet.tau, p.delta_min) {
        sheet.kappa = Some(kappa_bound(sheet.q_error, tau, a, dm));
    }
    let spec = cfg.lyapunov.spec();
    sheet.hajek = hajek_constants_with(
        &spec,
        cfg.analysis.alpha_eff.unwrap_or(spec.alpha),
        cfg.analysis.rho_variant,
    )
    .ok();
    if let Some(cap) = cfg.run.budget_cap {
        let per_step = [
            ("vanilla formula (|A|C)^H", sheet.vanilla_calls),
            ("grid formula |A|C N(H,eps)", sheet.grid_call_ceiling),
            ("configured oracle", sheet.effective_calls),
        ];
        for (name, calls) in per_step {
            if let Some(c) = calls {
                if c > cap as f64 {
                    sheet.over_budget.push(format!("{name}: {c:.4e} calls per step exceeds cap {cap}"));
                }
            }
        }
    }
    Ok(sheet)
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

impl ParamSheet {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "inputs: delta = {}, gamma = {}, |A| = {}, d = {}, R_max = {}, V_max = {}",
            self.delta, self.gamma, self.action_count, self.dimension, self.r_max, self.v_max);
        let _ = writeln!(s, "H = {}", opt(&self.horizon));
        let _ = writeln!(s, "C (vanilla) = {} (raw {})", opt(&self.width_vanilla), opt(&self.width_vanilla_raw));
        let _ = writeln!(s, "(|A|C)^H (vanilla) = {}", self.vanilla_calls.map_or("n/a".into(), |c| format!("{c:.4e}")));
        let _ = writeln!(s, "eps (grid) = {}", opt(&self.epsilon));
        let _ = writeln!(s, "C (grid) = {}", opt(&self.width_grid));
        let _ = writeln!(s, "N(H, eps) = {}", self.grid_bound.map_or("n/a".into(), |c| format!("{c:.4e}")));
        let _ = writeln!(s, "|A| C N(H, eps) = {}", self.grid_call_ceiling.map_or("n/a".into(), |c| format!("{c:.4e}")));
        if let Some(e) = &self.formula_error {
            let _ = writeln!(s, "formula error: {e}");
        }
        if let Some(eff) = &self.effective {
            let _ = writeln!(
                s,
                "configured oracle: H = {}, C = {}, eps = {}, worst-case calls per step = {}",
                eff.horizon(),
                eff.width(),
                opt(&eff.epsilon()),
                self.effective_calls.map_or("n/a".into(), |c| format!("{c:.4e}"))
            );
        }
        let _ = writeln!(s, "Q error radius = {}", self.q_error);
        if let Some(t) = &self.tau_terms {
            let _ = writeln!(s, "tau terms = {}, {}, {}, {}", t.drift, t.horizon, t.estimate, opt(&t.gap));
        }
        let _ = writeln!(s, "tau = {}", opt(&self.tau));
        let _ = writeln!(s, "kappa = {}", opt(&self.kappa));
        if let Some(h) = &self.hajek {
            let _ = writeln!(s, "c = {}, eta = {}, rho = {} ({:?})", h.c, h.eta, h.rho, h.variant);
        }
        for line in &self.over_budget {
            let _ = writeln!(s, "OVER BUDGET: {line}");
        }
        s
    }
}
