use proptest::prelude::*;

use stableplan::adaptive::{
    near_stability_metric, run_adaptive, tuner_step, TunerConfig, TunerState, DEFAULT_FLOOR,
};
use stableplan::control::{OracleParams, PlannerPolicy, StepPolicy};
use stableplan::environments::{FiniteMdp, Runaway, TwoQueueConfig};
use stableplan::oracle::{GridParams, SparseParams};
use stableplan::stability::LyapunovSpec;
use stableplan::trajectory::{TrajectoryHeader, TrialStatus};
use stableplan::{Error, State, StreamKey};

fn header() -> TrajectoryHeader {
    TrajectoryHeader {
        environment: String::new(),
        trial: 0,
        seed: 0,
        horizon: 0,
        dimension: 1,
        config_hash: String::new(),
        status: TrialStatus::Complete,
    }
}

fn planner(params: OracleParams) -> impl FnMut(f64) -> stableplan::Result<Box<dyn StepPolicy>> {
    move |delta: f64| Ok(Box::new(PlannerPolicy::new(params, delta.sqrt(), delta)?) as Box<dyn StepPolicy>)
}

#[test]
fn runaway_schedule_matches_hand_trace() {
    // s_t = t and (ln t)² < t for all t >= 1, so every tested step fires:
    // t = 10, ..., 29 halve δ down to 2^-20; the test at t = 30 hits the floor.
    let model = Runaway { gamma: 0.5 };
    let mut factory = planner(OracleParams::Vanilla(SparseParams::explicit(0.5, 1, 1).unwrap()));
    let spec = LyapunovSpec::euclidean(1, 0.0, 0.5);
    let out = stableplan::adaptive::run_adaptive_partial(
        &model,
        &mut factory,
        &spec,
        State::scalar(0.0),
        100,
        &StreamKey::new(1),
        TunerConfig::default(),
        u64::MAX,
        header(),
    )
    .unwrap();
    assert_eq!(out.tuner.halving_times(), (10..30).collect::<Vec<u64>>());
    assert_eq!(out.tuner.delta(), DEFAULT_FLOOR);
    assert!(matches!(
        out.error.as_ref().unwrap().root(),
        Error::DeltaFloor { t: 30, .. }
    ));
    let deltas: Vec<f64> = out.record.rows.iter().map(|r| r.delta).collect();
    for (t, d) in deltas.iter().enumerate() {
        let k = (t as i32 - 10).clamp(0, 20);
        assert_eq!(*d, 0.5f64.powi(k), "t={t}");
    }
    // the metric over the logged prefix grows without bound: 30 / (ln 30)²
    let m = near_stability_metric(&out.record, 10).unwrap();
    assert!((m - 30.0 / 30f64.ln().powi(2)).abs() < 1e-12);
    assert!(m > 2.5);
}

#[test]
fn pinned_origin_never_halves() {
    let model = FiniteMdp::self_loop(2, 0.5, 0.9).unwrap();
    let mut factory = planner(OracleParams::Grid(GridParams::explicit(0.9, 2, 2, 1.0, 1, 1.0).unwrap()));
    let (record, tuner) = run_adaptive(
        &model,
        &mut factory,
        &LyapunovSpec::euclidean(1, 0.0, 0.5),
        State::scalar(0.0),
        500,
        &StreamKey::new(2),
        TunerConfig::default(),
        u64::MAX,
        header(),
    )
    .unwrap();
    assert_eq!(tuner.halving_count(), 0);
    assert!(record.rows.iter().all(|r| r.delta == 1.0));
}

#[test]
fn budget_errors_carry_the_step() {
    let model = Runaway { gamma: 0.5 };
    // 2 + 4 calls per step, budget for three steps
    let mut factory = planner(OracleParams::Vanilla(SparseParams::explicit(0.5, 2, 2).unwrap()));
    let err = run_adaptive(
        &model,
        &mut factory,
        &LyapunovSpec::euclidean(1, 0.0, 0.5),
        State::scalar(0.0),
        50,
        &StreamKey::new(3),
        TunerConfig::default(),
        20,
        header(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::AtStep { step: 3, .. }));
    assert!(err.is_budget());
}

#[test]
fn replay_gives_identical_schedules() {
    let model = TwoQueueConfig {
        lambda: [0.45, 0.45],
        mu: [0.8, 0.8],
        reward_scale: 1.0,
    }
    .model(0.9)
    .unwrap();
    let params = OracleParams::Grid(GridParams::explicit(0.9, 2, 3, 1.0, 2, 2f64.sqrt()).unwrap());
    let run = || {
        let mut factory = planner(params);
        run_adaptive(
            &model,
            &mut factory,
            &LyapunovSpec::euclidean(2, 0.0, 0.05),
            State::from([8.0, 8.0]),
            400,
            &StreamKey::new(4),
            TunerConfig { t0: 10, floor: 1e-300 },
            u64::MAX,
            header(),
        )
        .unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    // started far out, so the test fires early on
    assert!(ta.halving_count() > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn delta_is_a_power_of_two_and_nonincreasing(norms in proptest::collection::vec(0.0f64..40.0, 1..300), t0 in 1u64..20) {
        let mut st = TunerState::new(TunerConfig { t0, floor: 1e-300 }).unwrap();
        let mut prev = st.delta();
        for (i, &n) in norms.iter().enumerate() {
            st = tuner_step(st, i as u64 + 1, &State::scalar(n)).unwrap();
            prop_assert_eq!(st.delta(), 0.5f64.powi(st.halving_count() as i32));
            prop_assert!(st.delta() <= prev);
            prev = st.delta();
        }
        prop_assert_eq!(st.halving_count() as usize, st.test_log.iter().filter(|e| e.fired).count());
    }

    #[test]
    fn quiet_tail_bounds_the_metric(norms in proptest::collection::vec(0.0f64..30.0, 30..300), t0 in 2u64..20) {
        let mut st = TunerState::new(TunerConfig { t0, floor: 1e-300 }).unwrap();
        for (t, &n) in norms.iter().enumerate() {
            st.observe(t as u64, &State::scalar(n)).unwrap();
        }
        let last_fire = st.halving_times().last().copied().unwrap_or(0);
        let start = (last_fire + 1).max(t0);
        if (start as usize) < norms.len() {
            let traj = stableplan::trajectory::TrajectoryRecord::from_lyapunov(&norms);
            let m = near_stability_metric(&traj, start).unwrap();
            prop_assert!(m < 1.0, "metric {} after last halving at {}", m, last_fire);
        }
    }
}
