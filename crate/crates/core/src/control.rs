//! Closed-loop simulation: plan at `s_t`, sample an action, step the model.
//!
//! Every time step `t` of a trial draws from sub-streams of
//! `trial_key.child(t)`: child 0 feeds the oracle, child 1 the action draw
//! and child 2 the environment transition. Results are therefore independent
//! of scheduling across trials.

use serde::{Deserialize, Serialize};

use crate::environments::serve_longest;
use crate::error::{Error, Result};
use crate::mdp::{step, ActionId, GenerativeModel, State, StreamKey};
use crate::oracle::{estimate_q, estimate_q_grid, GridCache, GridParams, SparseParams};
use crate::policy::{boltzmann, sample_action, ActionDistribution};
use crate::stability::LyapunovSpec;
use crate::trajectory::{StepRow, TrajectoryHeader, TrajectoryRecord, TrialStatus};

const ORACLE_STREAM: u64 = 0;
const ACTION_STREAM: u64 = 1;
const ENV_STREAM: u64 = 2;

/// An action distribution for one step and the simulator calls spent on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub dist: ActionDistribution,
    pub samples_used: u64,
}

pub trait StepPolicy: Send {
    /// Accuracy parameter logged with each step.
    fn delta(&self) -> f64;

    /// `cap` is the remaining simulator-call budget of the trial.
    fn decide(
        &mut self,
        model: &dyn GenerativeModel,
        s: &State,
        key: &StreamKey,
        cap: u64,
    ) -> Result<Decision>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleParams {
    Vanilla(SparseParams),
    Grid(GridParams),
    /// Zero look-ahead: `Q̂ ≡ 0` without sampling (accuracy `δ >= 1`).
    Flat,
}

impl OracleParams {
    pub fn horizon(&self) -> u32 {
        match self {
            OracleParams::Vanilla(p) => p.horizon,
            OracleParams::Grid(p) => p.horizon,
            OracleParams::Flat => 0,
        }
    }

    pub fn width(&self) -> u64 {
        match self {
            OracleParams::Vanilla(p) => p.width,
            OracleParams::Grid(p) => p.width,
            OracleParams::Flat => 0,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            OracleParams::Grid(p) => Some(p.epsilon),
            _ => None,
        }
    }
}

/// Boltzmann action selection over oracle estimates.
#[derive(Clone, Debug)]
pub struct PlannerPolicy {
    pub params: OracleParams,
    pub tau: f64,
    pub delta: f64,
    cache: GridCache,
}

impl PlannerPolicy {
    pub fn new(params: OracleParams, tau: f64, delta: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::usage(format!("temperature must be positive, got {tau}")));
        }
        Ok(PlannerPolicy {
            params,
            tau,
            delta,
            cache: GridCache::new(),
        })
    }

    pub fn estimate(
        &mut self,
        model: &dyn GenerativeModel,
        s: &State,
        key: &StreamKey,
        cap: u64,
    ) -> Result<(Vec<f64>, u64)> {
        let est = match &self.params {
            OracleParams::Vanilla(p) => estimate_q(model, s, p, key, cap)?,
            OracleParams::Grid(p) => {
                // samples are reused within one tree, never across time steps
                self.cache.clear();
                estimate_q_grid(model, s, p, &mut self.cache, key, cap)?
            }
            OracleParams::Flat => {
                crate::mdp::check_input(model, s, ActionId(0))?;
                return Ok((vec![0.0; model.action_count()], 0));
            }
        };
        Ok((est.values, est.samples_used))
    }
}

impl StepPolicy for PlannerPolicy {
    fn delta(&self) -> f64 {
        self.delta
    }

    fn decide(
        &mut self,
        model: &dyn GenerativeModel,
        s: &State,
        key: &StreamKey,
        cap: u64,
    ) -> Result<Decision> {
        let (q, samples_used) = self.estimate(model, s, key, cap)?;
        Ok(Decision {
            dist: boltzmann(&q, self.tau)?,
            samples_used,
        })
    }
}

/// Uniformly random actions; no planning.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl StepPolicy for UniformPolicy {
    fn delta(&self) -> f64 {
        1.0
    }

    fn decide(&mut self, model: &dyn GenerativeModel, _: &State, _: &StreamKey, _: u64) -> Result<Decision> {
        Ok(Decision {
            dist: ActionDistribution::uniform(model.action_count()),
            samples_used: 0,
        })
    }
}

/// Serve the longest queue; action `i` serves queue `i`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ServeLongestPolicy;

impl StepPolicy for ServeLongestPolicy {
    fn delta(&self) -> f64 {
        0.0
    }

    fn decide(&mut self, model: &dyn GenerativeModel, s: &State, _: &StreamKey, _: u64) -> Result<Decision> {
        if model.action_count() != s.dim() {
            return Err(Error::usage("serve-longest needs one action per queue"));
        }
        Ok(Decision {
            dist: ActionDistribution::point(model.action_count(), serve_longest(s)),
            samples_used: 0,
        })
    }
}

/// A trajectory, possibly cut short; `error` holds the cause of a stop.
#[derive(Debug)]
pub struct LoopOutcome {
    pub record: TrajectoryRecord,
    pub error: Option<Error>,
}

pub(crate) fn state_row(
    t: u64,
    s: &State,
    lyapunov: &LyapunovSpec,
    delta: f64,
) -> Result<StepRow> {
    Ok(StepRow {
        t,
        state: s.clone(),
        action: None,
        reward: None,
        lyapunov: lyapunov.checked_value(s)?,
        norm: s.norm2(),
        delta,
        samples_used: 0,
    })
}

/// One closed-loop step from `s_t`; fills in the row's action, reward and
/// samples and returns `s_{t+1}`.
pub(crate) fn advance(
    model: &dyn GenerativeModel,
    policy: &mut dyn StepPolicy,
    row: &mut StepRow,
    trial_key: &StreamKey,
    remaining: u64,
) -> Result<State> {
    let key = trial_key.child(row.t);
    let decision = policy.decide(model, &row.state, &key.child(ORACLE_STREAM), remaining)?;
    let a = sample_action(&decision.dist, &mut key.child(ACTION_STREAM).stream());
    let (next, r) = step(model, &row.state, a, &mut key.child(ENV_STREAM).stream())?;
    row.action = Some(a);
    row.reward = Some(r);
    row.samples_used = decision.samples_used;
    Ok(next)
}

/// Runs `horizon` steps from `initial`. `budget` caps the total simulator
/// calls of the trial. A failure stops the loop and logs `s_t` as the last
/// row; the header status records the cause.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &dyn GenerativeModel,
    policy: &mut dyn StepPolicy,
    lyapunov: &LyapunovSpec,
    initial: State,
    horizon: u64,
    trial_key: &StreamKey,
    budget: u64,
    header: TrajectoryHeader,
) -> LoopOutcome {
    let mut record = TrajectoryRecord::new(TrajectoryHeader { horizon, ..header });
    let mut used = 0u64;
    let mut s = initial;
    for t in 0..=horizon {
        let mut row = match state_row(t, &s, lyapunov, policy.delta()) {
            Ok(row) => row,
            Err(e) => return fail(record, e.at_step(t)),
        };
        if t == horizon {
            record.rows.push(row);
            break;
        }
        match advance(model, policy, &mut row, trial_key, budget - used) {
            Ok(next) => {
                used += row.samples_used;
                record.rows.push(row);
                s = next;
            }
            Err(e) => {
                record.rows.push(row);
                return fail(record, e.at_step(t));
            }
        }
    }
    LoopOutcome { record, error: None }
}

pub(crate) fn fail(mut record: TrajectoryRecord, e: Error) -> LoopOutcome {
    record.header.status = TrialStatus::Failed(e.to_string());
    LoopOutcome {
        record,
        error: Some(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{Runaway, TwoQueueConfig};

    fn header() -> TrajectoryHeader {
        TrajectoryHeader {
            environment: String::new(),
            trial: 0,
            seed: 7,
            horizon: 0,
            dimension: 2,
            config_hash: String::new(),
            status: TrialStatus::Complete,
        }
    }

    #[test]
    fn planner_loop_logs_every_step() {
        let model = TwoQueueConfig {
            lambda: [0.3, 0.3],
            mu: [0.8, 0.8],
            reward_scale: 1.0,
        }
        .model(0.9)
        .unwrap();
        let params = OracleParams::Grid(GridParams::explicit(0.9, 2, 3, 1.0, 2, 2f64.sqrt()).unwrap());
        let mut policy = PlannerPolicy::new(params, 0.3, 0.1).unwrap();
        let spec = LyapunovSpec::euclidean(2, 0.0, 0.1);
        let key = StreamKey::new(7);
        let out = simulate(&model, &mut policy, &spec, State::zeros(2), 50, &key, u64::MAX, header());
        assert!(out.error.is_none());
        assert_eq!(out.record.len(), 51);
        assert!(out.record.rows[..50].iter().all(|r| r.action.is_some() && r.samples_used > 0));
        assert!(out.record.rows[50].action.is_none());
        let again = simulate(&model, &mut policy, &spec, State::zeros(2), 50, &key, u64::MAX, header());
        assert_eq!(out.record, again.record);
    }

    #[test]
    fn budget_stops_the_trial() {
        let model = Runaway { gamma: 0.5 };
        let params = OracleParams::Vanilla(SparseParams::explicit(0.5, 2, 2).unwrap());
        let mut policy = PlannerPolicy::new(params, 1.0, 0.25).unwrap();
        let spec = LyapunovSpec::euclidean(1, 0.0, 0.1);
        // 6 calls per step
        let out = simulate(&model, &mut policy, &spec, State::scalar(0.0), 10, &StreamKey::new(1), 20, header());
        let err = out.error.unwrap();
        assert!(err.is_budget());
        assert!(matches!(err, Error::AtStep { step: 3, .. }));
        assert_eq!(out.record.len(), 4);
        assert_eq!(out.record.total_samples(), 18);
        assert!(!out.record.header.status.is_complete());
    }
}
