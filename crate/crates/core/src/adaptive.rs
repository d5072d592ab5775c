//! Online δ-halving.
//!
//! Starting from `δ₀ = 1`, the tuner tests `‖s_t‖₂ >= (ln t)²` at every step
//! `t >= t0` and halves `δ` each time the test fires. Testing starts at `t0`
//! because `(ln t)²` is tiny for small `t` and fires on almost any state.
//! A floor on `δ` turns runaway halving into an error instead of an
//! ever-growing planner budget.

use serde::{Deserialize, Serialize};

use crate::control::{advance, fail, state_row, LoopOutcome, StepPolicy};
use crate::error::{Error, Result};
use crate::mdp::{GenerativeModel, State, StreamKey};
use crate::stability::LyapunovSpec;
use crate::trajectory::{TrajectoryHeader, TrajectoryRecord};

pub const DEFAULT_T0: u64 = 10;
pub const DEFAULT_FLOOR: f64 = 1.0 / 1_048_576.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerConfig {
    pub t0: u64,
    pub floor: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            t0: DEFAULT_T0,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEvent {
    pub t: u64,
    pub norm: f64,
    pub threshold: f64,
    pub fired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    delta: f64,
    halving_count: u32,
    pub t0: u64,
    pub floor: f64,
    pub test_log: Vec<TestEvent>,
}

impl TunerState {
    pub fn new(config: TunerConfig) -> Result<Self> {
        if config.t0 == 0 {
            return Err(Error::usage("tuner warm-up t0 must be at least 1"));
        }
        if !(config.floor > 0.0 && config.floor <= 1.0) {
            return Err(Error::usage(format!("delta floor must be in (0, 1], got {}", config.floor)));
        }
        Ok(TunerState {
            delta: 1.0,
            halving_count: 0,
            t0: config.t0,
            floor: config.floor,
            test_log: Vec::new(),
        })
    }

    /// Always `2^-halving_count`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn halving_count(&self) -> u32 {
        self.halving_count
    }

    /// Times at which the test fired.
    pub fn halving_times(&self) -> Vec<u64> {
        self.test_log.iter().filter(|e| e.fired).map(|e| e.t).collect()
    }

    /// Tests `s` at time `t`; returns whether `δ` was halved. Halving below
    /// the floor is an error and leaves `δ` unchanged.
    pub fn observe(&mut self, t: u64, s: &State) -> Result<bool> {
        if t < self.t0 || t == 0 {
            return Ok(false);
        }
        let norm = s.norm2();
        let threshold = (t as f64).ln().powi(2);
        let fired = norm >= threshold;
        if fired {
            let next = 0.5f64.powi(self.halving_count as i32 + 1);
            if next < self.floor {
                return Err(Error::DeltaFloor {
                    t,
                    delta: self.delta,
                    floor: self.floor,
                });
            }
            self.halving_count += 1;
            self.delta = next;
        }
        self.test_log.push(TestEvent {
            t,
            norm,
            threshold,
            fired,
        });
        Ok(fired)
    }
}

pub fn tuner_step(mut state: TunerState, t: u64, s: &State) -> Result<TunerState> {
    state.observe(t, s)?;
    Ok(state)
}

/// `max_{t >= t0} ‖s_t‖₂ / (ln t)²`, with `t = 1` skipped since `ln 1 = 0`.
pub fn near_stability_metric(traj: &TrajectoryRecord, t0: u64) -> Result<f64> {
    if traj.len() as u64 <= t0 {
        return Err(Error::usage(format!(
            "near-stability metric from t0={t0} needs more than {} steps",
            traj.len()
        )));
    }
    Ok(traj
        .rows
        .iter()
        .filter(|r| r.t >= t0.max(2))
        .map(|r| r.norm / (r.t as f64).ln().powi(2))
        .fold(0.0, f64::max))
}

/// A closed-loop run with the tuner attached; `error` is set if it stopped early.
#[derive(Debug)]
pub struct AdaptiveOutcome {
    pub record: TrajectoryRecord,
    pub tuner: TunerState,
    pub error: Option<Error>,
}

/// Plans with `factory(δ_t)` at each step; the factory is called again
/// after every halving. The tuner runs on `s_t` after the step at `t`, so `δ_{t+1}`
/// reflects the test at `t`.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive_partial(
    model: &dyn GenerativeModel,
    factory: &mut dyn FnMut(f64) -> Result<Box<dyn StepPolicy>>,
    lyapunov: &LyapunovSpec,
    initial: State,
    horizon: u64,
    trial_key: &StreamKey,
    tuner: TunerConfig,
    budget: u64,
    header: TrajectoryHeader,
) -> Result<AdaptiveOutcome> {
    let mut state = TunerState::new(tuner)?;
    let mut policy = factory(state.delta())?;
    let record = TrajectoryRecord::new(TrajectoryHeader { horizon, ..header });
    let mut out = AdaptiveOutcome {
        record,
        tuner: state.clone(),
        error: None,
    };
    let mut used = 0u64;
    let mut s = initial;
    for t in 0..=horizon {
        let mut row = match state_row(t, &s, lyapunov, state.delta()) {
            Ok(row) => row,
            Err(e) => return Ok(stop(out, state, e.at_step(t))),
        };
        if t == horizon {
            out.record.rows.push(row);
            break;
        }
        let next = advance(model, policy.as_mut(), &mut row, trial_key, budget - used);
        used += row.samples_used;
        out.record.rows.push(row);
        let next = match next {
            Ok(next) => next,
            Err(e) => return Ok(stop(out, state, e.at_step(t))),
        };
        match state.observe(t, &s) {
            Ok(true) => match factory(state.delta()) {
                Ok(p) => policy = p,
                Err(e) => return Ok(stop(out, state, e.at_step(t))),
            },
            Ok(false) => {}
            Err(e) => return Ok(stop(out, state, e.at_step(t))),
        }
        s = next;
    }
    out.tuner = state;
    Ok(out)
}

fn stop(out: AdaptiveOutcome, state: TunerState, e: Error) -> AdaptiveOutcome {
    let LoopOutcome { record, error } = fail(out.record, e);
    AdaptiveOutcome {
        record,
        tuner: state,
        error,
    }
}

/// Like [`run_adaptive_partial`] but any early stop is an error carrying the
/// step index.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive(
    model: &dyn GenerativeModel,
    factory: &mut dyn FnMut(f64) -> Result<Box<dyn StepPolicy>>,
    lyapunov: &LyapunovSpec,
    initial: State,
    horizon: u64,
    trial_key: &StreamKey,
    tuner: TunerConfig,
    budget: u64,
    header: TrajectoryHeader,
) -> Result<(TrajectoryRecord, TunerState)> {
    let out = run_adaptive_partial(
        model, factory, lyapunov, initial, horizon, trial_key, tuner, budget, header,
    )?;
    match out.error {
        Some(e) => Err(e),
        None => Ok((out.record, out.tuner)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let st = TunerState::new(TunerConfig::default()).unwrap();
        let fired = tuner_step(st.clone(), 100, &State::scalar(25.0)).unwrap();
        assert_eq!(fired.delta(), 0.5);
        assert!((fired.test_log[0].threshold - 21.207_592).abs() < 1e-5);
        let quiet = tuner_step(st.clone(), 100, &State::scalar(10.0)).unwrap();
        assert_eq!(quiet.delta(), 1.0);
        let early = tuner_step(st, 9, &State::scalar(1e9)).unwrap();
        assert_eq!((early.delta(), early.halving_count()), (1.0, 0));
        assert!(early.test_log.is_empty());
    }

    #[test]
    fn floor_aborts() {
        let mut st = TunerState::new(TunerConfig { t0: 2, floor: 0.25 }).unwrap();
        let big = State::scalar(1e6);
        assert!(st.observe(2, &big).unwrap());
        assert!(st.observe(3, &big).unwrap());
        let err = st.observe(4, &big).unwrap_err();
        assert!(matches!(err, Error::DeltaFloor { t: 4, .. }));
        assert_eq!(st.delta(), 0.25);
    }

    #[test]
    fn metric_examples() {
        let zeros = TrajectoryRecord::from_lyapunov(&[0.0; 50]);
        assert_eq!(near_stability_metric(&zeros, 10).unwrap(), 0.0);
        let mut path = vec![0.0; 150];
        path[100] = 42.416;
        let spike = TrajectoryRecord::from_lyapunov(&path);
        assert!((near_stability_metric(&spike, 10).unwrap() - 2.0).abs() < 1e-4);
        assert!(near_stability_metric(&spike, 150).is_err());
    }
}
