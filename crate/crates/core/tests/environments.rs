use proptest::prelude::*;

use stableplan::environments::{
    euclidean_lyapunov, serve_longest, two_queue_step, FiniteMdp, QueueNetwork, ReflectedWalk,
    TwoQueueConfig, UnitInterval,
};
use stableplan::{step, ActionId, GenerativeModel, State, StreamKey};

fn symmetric() -> QueueNetwork {
    TwoQueueConfig {
        lambda: [0.3, 0.3],
        mu: [0.8, 0.8],
        reward_scale: 1.0,
    }
    .model(0.9)
    .unwrap()
}

#[test]
fn serve_longest_drifts_down_above_five() {
    let net = symmetric();
    let key = StreamKey::new(2024);
    // start high so the conditioning set is visited often
    let mut q = State::from([20.0, 20.0]);
    let (mut n, mut sum) = (0u64, 0.0);
    for t in 0..1_000_000u64 {
        let a = serve_longest(&q);
        let (next, _) = two_queue_step(&net, &q, a, &mut key.child(t).stream()).unwrap();
        let l = euclidean_lyapunov(&q);
        if l > 5.0 {
            n += 1;
            sum += euclidean_lyapunov(&next) - l;
        }
        q = next;
    }
    let drift = sum / n as f64;
    assert!(n > 1_000, "only {n} steps above the level");
    assert!(drift <= -0.05, "drift {drift} over {n} steps");
}

#[test]
fn reflected_walk_matches_stationary_tail() {
    let walk = ReflectedWalk::new(0.4, 0.9).unwrap();
    let trials = 20_000u64;
    let t_end = 400u64;
    let master = StreamKey::new(77);
    let finals: Vec<f64> = (0..trials)
        .map(|i| {
            let key = master.child(i);
            let mut s = State::scalar(0.0);
            for t in 0..t_end {
                s = step(&walk, &s, ActionId(0), &mut key.child(t).stream()).unwrap().0;
            }
            s.coords()[0]
        })
        .collect();
    for b in 1..=6u32 {
        let p_hat = finals.iter().filter(|&&x| x >= f64::from(b)).count() as f64 / trials as f64;
        let p = walk.stationary_tail(b);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((p_hat - p).abs() <= 3.0 * se, "b={b}: {p_hat} vs {p} (se {se})");
    }
}

#[test]
fn reflected_walk_drift_above_zero() {
    let walk = ReflectedWalk::new(0.4, 0.9).unwrap();
    let key = StreamKey::new(5);
    let n = 200_000u64;
    let mut sum = 0.0;
    for t in 0..n {
        let s = State::scalar(10.0);
        sum += step(&walk, &s, ActionId(0), &mut key.child(t).stream()).unwrap().0.coords()[0] - 10.0;
    }
    let drift = sum / n as f64;
    assert!((drift - walk.drift()).abs() < 0.01, "{drift}");
}

#[test]
fn finite_mdp_samples_follow_rows() {
    let mdp = FiniteMdp::new(
        3,
        1,
        vec![vec![0.2, 0.5, 0.3], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![0.0, 1.0, 0.5],
        0.9,
    )
    .unwrap();
    let key = StreamKey::new(3);
    let n = 100_000u64;
    let mut counts = [0u64; 3];
    for i in 0..n {
        let (next, r) = step(&mdp, &mdp.state(0), ActionId(0), &mut key.child(i).stream()).unwrap();
        assert_eq!(r, 0.0);
        counts[next.coords()[0] as usize] += 1;
    }
    for (j, p) in [0.2, 0.5, 0.3].iter().enumerate() {
        let p_hat = counts[j] as f64 / n as f64;
        assert!((p_hat - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{j}: {p_hat}");
    }
}

#[test]
fn unit_interval_transitions_are_uniform() {
    let m = UnitInterval { gamma: 0.5 };
    let key = StreamKey::new(8);
    let n = 50_000u64;
    let mean: f64 = (0..n)
        .map(|i| step(&m, &State::scalar(0.3), ActionId(1), &mut key.child(i).stream()).unwrap().0.coords()[0])
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.25).abs() < 0.005);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queues_stay_integral_with_bounded_increments(
        seed in any::<u64>(),
        q0 in 0u32..30,
        q1 in 0u32..30,
        lambda in (0.05f64..0.95, 0.05f64..0.95),
        mu in (0.05f64..0.95, 0.05f64..0.95),
    ) {
        let net = QueueNetwork::new(vec![lambda.0, lambda.1], vec![mu.0, mu.1], 1.0, 0.9).unwrap();
        let key = StreamKey::new(seed);
        let mut q = State::from([f64::from(q0), f64::from(q1)]);
        for t in 0..200u64 {
            let a = ActionId((t % 2) as usize);
            let (next, r) = two_queue_step(&net, &q, a, &mut key.child(t).stream()).unwrap();
            prop_assert!(next.coords().iter().all(|&x| x >= 0.0 && x.fract() == 0.0));
            prop_assert!((0.0..=net.r_max()).contains(&r));
            let dl = (euclidean_lyapunov(&next) - euclidean_lyapunov(&q)).abs();
            let dx = State::new(next.coords().iter().zip(q.coords()).map(|(a, b)| a - b)).norm2();
            prop_assert!(dl <= 2f64.sqrt() + 1e-12);
            prop_assert!(dx <= 2f64.sqrt() + 1e-12);
            q = next;
        }
    }

    #[test]
    fn transitions_replay_bit_for_bit(seed in any::<u64>(), path in proptest::collection::vec(any::<u64>(), 0..5)) {
        let net = symmetric();
        let key = StreamKey::with_path(seed, &path);
        let q = State::from([4.0, 2.0]);
        let a = step(&net, &q, ActionId(1), &mut key.stream()).unwrap();
        let b = step(&net, &q, ActionId(1), &mut key.stream()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn walk_rewards_are_bounded(seed in any::<u64>(), s in 0u32..1000) {
        let walk = ReflectedWalk::new(0.4, 0.9).unwrap();
        let (next, r) = step(&walk, &State::scalar(f64::from(s)), ActionId(0), &mut StreamKey::new(seed).stream()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(next.coords()[0] >= 0.0);
    }
}
