//! Experiment configuration (TOML). Unknown keys are rejected.
//!
//! ```toml
//! [environment]
//! kind = "two_queue"
//! lambda = [0.3, 0.3]
//! mu = [0.8, 0.8]
//! gamma = 0.9
//!
//! [oracle]
//! kind = "grid"
//! source = "override"
//! horizon = 3
//! width = 10
//! epsilon = 1.0
//!
//! [policy]
//! kind = "boltzmann"
//! tau = 0.3
//!
//! [lyapunov]
//! nu = 1.4142135623730951
//! nu_prime = 1.4142135623730951
//! b = 10.0
//! alpha = 0.1
//!
//! [run]
//! horizon = 50000
//! trials = 50
//! seed = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{TunerConfig, DEFAULT_FLOOR, DEFAULT_T0};
use crate::control::OracleParams;
use crate::environments::{QueueNetwork, ReflectedWalk, Runaway};
use crate::error::{Error, Result};
use crate::mdp::{GenerativeModel, State};
use crate::oracle::{grid_params, sparse_params, GridParams, SparseParams};
use crate::policy::tau_of_alpha;
use crate::stability::{LyapunovSpec, Norm, RhoVariant, VerdictOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    TwoQueue,
    ReflectedWalk,
    Runaway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub kind: EnvironmentKind,
    pub gamma: f64,
    /// Arrival probabilities per slot (queues).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    /// Service probabilities per slot (queues).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_scale: Option<f64>,
    /// Up-step probability (reflected walk).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_up: Option<f64>,
    /// Initial state; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<Box<dyn GenerativeModel>> {
        match self.kind {
            EnvironmentKind::TwoQueue => {
                let lambda = self
                    .lambda
                    .clone()
                    .ok_or_else(|| Error::Config("environment.lambda is required".into()))?;
                let mu = self
                    .mu
                    .clone()
                    .ok_or_else(|| Error::Config("environment.mu is required".into()))?;
                let net = QueueNetwork::new(lambda, mu, self.reward_scale.unwrap_or(1.0), self.gamma)
                    .map_err(|e| Error::Config(e.to_string()))?;
                Ok(Box::new(net))
            }
            EnvironmentKind::ReflectedWalk => {
                let p = self
                    .p_up
                    .ok_or_else(|| Error::Config("environment.p_up is required".into()))?;
                let walk = ReflectedWalk::new(p, self.gamma).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Box::new(walk))
            }
            EnvironmentKind::Runaway => {
                crate::environments::check_gamma(self.gamma).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Box::new(Runaway { gamma: self.gamma }))
            }
        }
    }

    pub fn initial_state(&self, dimension: usize) -> Result<State> {
        match &self.initial {
            None => Ok(State::zeros(dimension)),
            Some(v) if v.len() == dimension => Ok(State::new(v.iter().copied())),
            Some(v) => Err(Error::Config(format!(
                "environment.initial has {} coordinates, the model has {dimension}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Vanilla,
    #[default]
    Grid,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(OracleKind::Vanilla),
            "grid" => Ok(OracleKind::Grid),
            _ => Err(Error::usage(format!("unknown oracle `{s}` (vanilla | grid)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    /// `H`, `C` and `ε` from the accuracy formulas at `delta`.
    Formula,
    /// Explicit `horizon`, `width` and `epsilon`.
    #[default]
    Override,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub kind: OracleKind,
    #[serde(default)]
    pub source: ParamSource,
    /// Accuracy parameter for the formulas and the parameter sheet.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Lipschitz constant of `V*` in the grid-spacing formula.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

fn default_delta() -> f64 {
    0.1
}

fn default_zeta() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Boltzmann,
    ServeLongest,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub kind: PolicyKind,
    /// Explicit temperature; otherwise derived from `alpha`, `nu`, `delta_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_t0")]
    pub t0: u64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_t0() -> u64 {
    DEFAULT_T0
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            enabled: false,
            t0: DEFAULT_T0,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl AdaptiveConfig {
    pub fn tuner(&self) -> TunerConfig {
        TunerConfig {
            t0: self.t0,
            floor: self.floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(default)]
    pub norm: Norm,
    pub nu: f64,
    pub nu_prime: f64,
    pub b: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
}

fn one() -> f64 {
    1.0
}

impl LyapunovConfig {
    pub fn spec(&self) -> LyapunovSpec {
        LyapunovSpec {
            norm: self.norm,
            nu: self.nu,
            nu_prime: self.nu_prime,
            b: self.b,
            alpha: self.alpha,
            c1: self.c1,
            c2: self.c2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Simulator-call cap per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Candidate boundedness levels; `0, 1, ..., 100` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default = "default_checkpoints")]
    pub late_checkpoints: usize,
    #[serde(default = "default_tail_levels")]
    pub tail_levels: Vec<f64>,
    #[serde(default = "default_tail_times")]
    pub tail_times: Vec<u64>,
    /// Drift fed to the tail bounds; `lyapunov.alpha` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_eff: Option<f64>,
    #[serde(default)]
    pub rho_variant: RhoVariant,
}

fn default_theta() -> f64 {
    0.05
}

fn default_checkpoints() -> usize {
    10
}

fn default_tail_levels() -> Vec<f64> {
    VerdictOptions::default().tail_levels
}

fn default_tail_times() -> Vec<u64> {
    VerdictOptions::default().tail_times
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            theta: default_theta(),
            levels: None,
            late_checkpoints: default_checkpoints(),
            tail_levels: default_tail_levels(),
            tail_times: default_tail_times(),
            alpha_eff: None,
            rho_variant: RhoVariant::Proof,
        }
    }
}

impl AnalysisConfig {
    pub fn verdict_options(&self) -> VerdictOptions {
        let defaults = VerdictOptions::default();
        VerdictOptions {
            theta: self.theta,
            levels: self.levels.clone().unwrap_or(defaults.levels),
            late_checkpoints: self.late_checkpoints,
            tail_levels: self.tail_levels.clone(),
            tail_times: self.tail_times.clone(),
            alpha_eff: self.alpha_eff,
            rho_variant: self.rho_variant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub oracle: OracleConfig,
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    pub lyapunov: LyapunovConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_policy() -> PolicyConfig {
    PolicyConfig {
        kind: PolicyKind::Boltzmann,
        tau: None,
        alpha: None,
        nu: None,
        delta_min: None,
    }
}

/// Planner parameters under both sources, for auditing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedOracle {
    pub kind: OracleKind,
    pub source: ParamSource,
    pub delta: f64,
    /// Formula values at `delta`; absent when the formulas reject the inputs.
    pub formula: Option<OracleParams>,
    pub formula_error: Option<String>,
    /// Values the planner runs with.
    pub effective: OracleParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.environment.build()?;
        self.environment.initial_state(model.dimension())?;
        self.lyapunov.spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.run.trials == 0 {
            return Err(Error::Config("run.trials must be at least 1".into()));
        }
        if self.run.workers == 0 {
            return Err(Error::Config("run.workers must be at least 1".into()));
        }
        if !(self.analysis.theta > 0.0 && self.analysis.theta < 1.0) {
            return Err(Error::Config("analysis.theta must be in (0, 1)".into()));
        }
        if self.policy.kind == PolicyKind::Boltzmann && !self.adaptive.enabled {
            self.tau(model.as_ref())?;
        }
        if self.policy.kind == PolicyKind::ServeLongest && model.action_count() != model.dimension() {
            return Err(Error::Config("serve_longest needs one action per queue".into()));
        }
        if self.oracle.source == ParamSource::Override {
            let o = &self.oracle;
            if o.horizon.is_none() || o.width.is_none() {
                return Err(Error::Config("oracle.source = override needs horizon and width".into()));
            }
            if o.kind == OracleKind::Grid && o.epsilon.is_none() {
                return Err(Error::Config("grid oracle override needs epsilon".into()));
            }
        }
        Ok(())
    }

    /// Explicit `tau`, or the stable temperature from `alpha`, `nu` and `delta_min`.
    pub fn tau(&self, model: &dyn GenerativeModel) -> Result<f64> {
        let p = &self.policy;
        if let Some(tau) = p.tau {
            return if tau > 0.0 && tau.is_finite() {
                Ok(tau)
            } else {
                Err(Error::Config(format!("policy.tau must be positive, got {tau}")))
            };
        }
        match (p.alpha, p.nu, p.delta_min) {
            (Some(alpha), Some(nu), Some(dm)) => {
                tau_of_alpha(alpha, nu, model.gamma(), model.r_max(), model.action_count(), dm)
                    .map_err(|e| Error::Config(e.to_string()))
            }
            _ => Err(Error::Config(
                "policy needs tau, or alpha, nu and delta_min to derive it".into(),
            )),
        }
    }

    /// Formula parameters at accuracy `delta`, or `Flat` for `delta >= 1`.
    pub fn formula_oracle(&self, model: &dyn GenerativeModel, delta: f64) -> Result<OracleParams> {
        if delta >= 1.0 {
            return Ok(OracleParams::Flat);
        }
        Ok(match self.oracle.kind {
            OracleKind::Vanilla => OracleParams::Vanilla(sparse_params(delta, model.gamma(), model.action_count())?),
            OracleKind::Grid => OracleParams::Grid(grid_params(
                delta,
                model.gamma(),
                self.oracle.zeta,
                model.dimension(),
                model.v_max(),
                model.action_count(),
                self.lyapunov.nu_prime,
            )?),
        })
    }

    pub fn override_oracle(&self, model: &dyn GenerativeModel) -> Result<OracleParams> {
        let o = &self.oracle;
        let (h, c) = match (o.horizon, o.width) {
            (Some(h), Some(c)) => (h, c),
            _ => return Err(Error::Config("oracle override needs horizon and width".into())),
        };
        Ok(match o.kind {
            OracleKind::Vanilla => OracleParams::Vanilla(SparseParams::explicit(model.gamma(), h, c)?),
            OracleKind::Grid => {
                let eps = o
                    .epsilon
                    .ok_or_else(|| Error::Config("grid oracle override needs epsilon".into()))?;
                OracleParams::Grid(GridParams::explicit(
                    model.gamma(),
                    h,
                    c,
                    eps,
                    model.dimension(),
                    self.lyapunov.nu_prime,
                )?)
            }
        })
    }

    pub fn resolve_oracle(&self, model: &dyn GenerativeModel, delta: f64) -> Result<ResolvedOracle> {
        let (formula, formula_error) = match self.formula_oracle(model, delta) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let effective = match self.oracle.source {
            ParamSource::Override => self.override_oracle(model)?,
            ParamSource::Formula => match &formula {
                Some(p) => *p,
                None => return Err(Error::Config(formula_error.unwrap_or_default())),
            },
        };
        Ok(ResolvedOracle {
            kind: self.oracle.kind,
            source: self.oracle.source,
            delta,
            formula,
            formula_error,
            effective,
        })
    }

    pub fn verdict_options(&self) -> VerdictOptions {
        self.analysis.verdict_options()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[environment]
kind = "two_queue"
lambda = [0.3, 0.3]
mu = [0.8, 0.8]
gamma = 0.9

[oracle]
kind = "grid"
source = "override"
horizon = 3
width = 10
epsilon = 1.0

[policy]
tau = 0.3

[lyapunov]
nu = 1.4142135623730951
nu_prime = 1.4142135623730951
b = 10.0
alpha = 0.1

[run]
horizon = 100
trials = 2
seed = 1
"#;

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_keys_fail() {
        let bad = SAMPLE.replace("tau = 0.3", "tau = 0.3\ntemperature = 1");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn missing_tau_inputs_fail() {
        let bad = SAMPLE.replace("tau = 0.3", "alpha = 0.1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let ok = SAMPLE.replace("tau = 0.3", "alpha = 0.1\nnu = 1.0\ndelta_min = 0.5");
        let cfg = ExperimentConfig::from_toml(&ok).unwrap();
        let model = cfg.environment.build().unwrap();
        assert!((cfg.tau(model.as_ref()).unwrap() - 5.208_333e-5).abs() < 1e-10);
    }

    #[test]
    fn both_parameter_sources_resolved() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let model = cfg.environment.build().unwrap();
        let r = cfg.resolve_oracle(model.as_ref(), 0.1).unwrap();
        assert_eq!(r.effective.horizon(), 3);
        assert_eq!(r.formula.unwrap().horizon(), 22);
        let flat = cfg.resolve_oracle(model.as_ref(), 1.0).unwrap();
        assert_eq!(flat.formula, Some(OracleParams::Flat));
    }
}
