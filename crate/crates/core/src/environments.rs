//! Bundled generative models with known ground truth.
//!
//! - [`QueueNetwork`]: `N` Bernoulli queues sharing one server, slotted time.
//!   [`TwoQueueConfig`] is the two-queue instance.
//! - [`ReflectedWalk`]: `s' = max(0, s ± 1)`, a one-dimensional chain whose
//!   drift and stationary tail are known in closed form.
//! - [`FiniteMdp`]: tabular MDP with an exact value-iteration solver.
//! - [`UnitInterval`]: continuous-state model on `[0, 1]` with closed-form `Q*`
//!   and Lipschitz value function.
//! - [`Runaway`]: deterministic `s' = s + 1`, never stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, GenerativeModel, State, Stream};

/// Outcome of the random events in one queueing slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotEvents {
    /// Whether the served queue's service attempt succeeds.
    pub served: bool,
    pub arrivals: Vec<bool>,
}

/// `N` queues, one server. Each slot: the chosen queue completes a job with
/// probability `mu[a]` (a no-op when it is empty), then every queue `i`
/// receives an arrival with probability `lambda[i]`.
///
/// Reward is `reward_scale / (1 + Σ q_i)` evaluated before the slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueNetwork {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    reward_scale: f64,
    gamma: f64,
}

impl QueueNetwork {
    pub fn new(lambda: Vec<f64>, mu: Vec<f64>, reward_scale: f64, gamma: f64) -> Result<Self> {
        if lambda.is_empty() || lambda.len() != mu.len() {
            return Err(Error::usage(format!(
                "queue network needs matching non-empty rate vectors, got {} arrival and {} service rates",
                lambda.len(),
                mu.len()
            )));
        }
        for &p in lambda.iter().chain(&mu) {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::usage(format!("rate {p} not in (0, 1)")));
            }
        }
        if !(reward_scale > 0.0 && reward_scale.is_finite()) {
            return Err(Error::usage(format!("reward_scale must be positive, got {reward_scale}")));
        }
        check_gamma(gamma)?;
        Ok(QueueNetwork {
            lambda,
            mu,
            reward_scale,
            gamma,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `Σ λ_i / μ_i`; the network is stabilizable iff this is below one.
    pub fn load(&self) -> f64 {
        self.lambda.iter().zip(&self.mu).map(|(l, m)| l / m).sum()
    }

    pub fn stability_feasible(&self) -> bool {
        self.load() < 1.0
    }

    pub fn reward(&self, q: &State) -> f64 {
        self.reward_scale / (1.0 + q.coords().iter().sum::<f64>())
    }

    pub fn draw_events(&self, a: ActionId, stream: &mut Stream) -> SlotEvents {
        let served = stream.uniform() < self.mu[a.0];
        let arrivals = self.lambda.iter().map(|&l| stream.uniform() < l).collect();
        SlotEvents { served, arrivals }
    }

    /// Deterministic slot update given the random events: depart, then arrive.
    pub fn apply(&self, q: &State, a: ActionId, events: &SlotEvents) -> (State, f64) {
        let reward = self.reward(q);
        let mut next = q.clone();
        let c = next.coords_mut();
        if events.served && c[a.0] > 0.0 {
            c[a.0] -= 1.0;
        }
        for (x, &arrived) in c.iter_mut().zip(&events.arrivals) {
            if arrived {
                *x += 1.0;
            }
        }
        (next, reward)
    }

    pub fn validate_state(&self, q: &State) -> Result<()> {
        if q.dim() != self.lambda.len() {
            return Err(Error::usage(format!(
                "queue state has dimension {}, expected {}",
                q.dim(),
                self.lambda.len()
            )));
        }
        for &x in q.coords() {
            if !(x >= 0.0 && x.fract() == 0.0 && x.is_finite()) {
                return Err(Error::usage(format!(
                    "queue lengths must be nonnegative integers, got {q:?}"
                )));
            }
        }
        Ok(())
    }
}

impl GenerativeModel for QueueNetwork {
    fn name(&self) -> &str {
        if self.lambda.len() == 2 {
            "two_queue"
        } else {
            "queue_network"
        }
    }

    fn dimension(&self) -> usize {
        self.lambda.len()
    }

    fn action_count(&self) -> usize {
        self.lambda.len()
    }

    fn r_max(&self) -> f64 {
        self.reward_scale
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64) {
        let events = self.draw_events(a, stream);
        self.apply(s, a, &events)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoQueueConfig {
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    pub reward_scale: f64,
}

impl TwoQueueConfig {
    pub fn stability_feasible(&self) -> bool {
        self.lambda[0] / self.mu[0] + self.lambda[1] / self.mu[1] < 1.0
    }

    pub fn model(&self, gamma: f64) -> Result<QueueNetwork> {
        QueueNetwork::new(self.lambda.to_vec(), self.mu.to_vec(), self.reward_scale, gamma)
    }
}

/// One validated slot of the two-queue (or any queue network) model.
pub fn two_queue_step(
    net: &QueueNetwork,
    q: &State,
    a: ActionId,
    stream: &mut Stream,
) -> Result<(State, f64)> {
    net.validate_state(q)?;
    crate::mdp::step(net, q, a, stream)
}

/// Index of the longest queue; ties go to the lowest index.
pub fn serve_longest(q: &State) -> ActionId {
    let mut best = 0;
    for (i, &x) in q.coords().iter().enumerate() {
        if x > q.coords()[best] {
            best = i;
        }
    }
    ActionId(best)
}

pub fn euclidean_lyapunov(q: &State) -> f64 {
    q.norm2()
}

/// `s' = max(0, s + X)` with `X = +1` w.p. `p_up`, else `-1`; one action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectedWalk {
    pub p_up: f64,
    pub gamma: f64,
}

impl ReflectedWalk {
    pub fn new(p_up: f64, gamma: f64) -> Result<Self> {
        if !(p_up > 0.0 && p_up < 1.0) {
            return Err(Error::usage(format!("p_up must be in (0, 1), got {p_up}")));
        }
        check_gamma(gamma)?;
        Ok(ReflectedWalk { p_up, gamma })
    }

    pub fn apply(&self, s: f64, up: bool) -> (f64, f64) {
        let next = if up { s + 1.0 } else { (s - 1.0).max(0.0) };
        (next, 1.0 / (1.0 + s))
    }

    /// Drift above the reflecting barrier: `2 p_up - 1`.
    pub fn drift(&self) -> f64 {
        2.0 * self.p_up - 1.0
    }

    /// Exact stationary `P(s >= b) = (p_up / (1 - p_up))^b` for `p_up < 1/2`.
    pub fn stationary_tail(&self, b: u32) -> f64 {
        (self.p_up / (1.0 - self.p_up)).powi(b as i32)
    }
}

impl GenerativeModel for ReflectedWalk {
    fn name(&self) -> &str {
        "reflected_walk"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        1
    }
    fn r_max(&self) -> f64 {
        1.0
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn sample(&self, s: &State, _a: ActionId, stream: &mut Stream) -> (State, f64) {
        let (next, r) = self.apply(s.coords()[0], stream.uniform() < self.p_up);
        (State::scalar(next), r)
    }
}

/// Tabular MDP. State `i` is embedded in `R^1` as the point `(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s * n_actions + a][s']`.
    pub transitions: Vec<Vec<f64>>,
    /// `rewards[s * n_actions + a]`.
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = FiniteMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Single state that loops to itself under every action.
    pub fn self_loop(n_actions: usize, reward: f64, gamma: f64) -> Result<Self> {
        FiniteMdp::new(1, n_actions, vec![vec![1.0]; n_actions], vec![reward; n_actions], gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::usage("finite MDP needs at least one state and one action"));
        }
        let rows = self.n_states * self.n_actions;
        if self.transitions.len() != rows || self.rewards.len() != rows {
            return Err(Error::usage(format!(
                "finite MDP tables must have {rows} rows (states x actions)"
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != self.n_states {
                return Err(Error::usage(format!("transition row {i} has {} entries", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::usage(format!("transition row {i} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::usage(format!("transition row {i} sums to {total}, not 1")));
            }
        }
        if self.rewards.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::usage("finite MDP rewards must be finite and nonnegative"));
        }
        check_gamma(self.gamma)
    }

    pub fn state(&self, i: usize) -> State {
        State::scalar(i as f64)
    }

    fn index_of(&self, s: &State) -> usize {
        let i = s.coords()[0];
        debug_assert!(i >= 0.0 && (i as usize) < self.n_states);
        i as usize
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s * self.n_actions + a]
    }
}

impl GenerativeModel for FiniteMdp {
    fn name(&self) -> &str {
        "finite"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        self.n_actions
    }
    fn r_max(&self) -> f64 {
        self.rewards.iter().copied().fold(0.0, f64::max)
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64) {
        let i = self.index_of(s);
        let row = self.row(i, a.0);
        let u = stream.uniform();
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        (State::scalar(next as f64), self.reward(i, a.0))
    }
}

/// `Q*` table, `values[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }
}

fn bellman(mdp: &FiniteMdp, q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let ev: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                    mdp.reward(s, a) + mdp.gamma * ev
                })
                .collect()
        })
        .collect()
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Value iteration until the Bellman residual is at most `tol`.
pub fn exact_q(mdp: &FiniteMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::usage(format!("tolerance must be positive, got {tol}")));
    }
    mdp.validate()?;
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    loop {
        let next = bellman(mdp, &q);
        let residual = sup_diff(&next, &q);
        if residual <= tol {
            return Ok(QTable { values: q, residual });
        }
        q = next;
    }
}

/// Continuous validation model on `[0, 1]` with two actions.
///
/// Reward `s²`; action 0 jumps to `U[0, 1]`, action 1 to `U[0, 1/2]`.
/// `V*` is Lipschitz with constant 2 and `Q*` is closed-form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitInterval {
    pub gamma: f64,
}

impl UnitInterval {
    /// `Q*(s, 0) = s² + γM`, `Q*(s, 1) = s² + γ(1/12 + γM)`, `M = (1/3)/(1-γ)`.
    pub fn q_star(&self, s: f64, a: usize) -> f64 {
        let g = self.gamma;
        let m = (1.0 / 3.0) / (1.0 - g);
        match a {
            0 => s * s + g * m,
            _ => s * s + g * (1.0 / 12.0 + g * m),
        }
    }
}

impl GenerativeModel for UnitInterval {
    fn name(&self) -> &str {
        "unit_interval"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        2
    }
    fn r_max(&self) -> f64 {
        1.0
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64) {
        let x = s.coords()[0];
        let width = if a.0 == 0 { 1.0 } else { 0.5 };
        (State::scalar(width * stream.uniform()), x * x)
    }
}

/// Deterministic `s' = s + 1` in one dimension, zero reward, one action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Runaway {
    pub gamma: f64,
}

impl GenerativeModel for Runaway {
    fn name(&self) -> &str {
        "runaway"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        1
    }
    fn r_max(&self) -> f64 {
        1.0
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn sample(&self, s: &State, _a: ActionId, _stream: &mut Stream) -> (State, f64) {
        (State::scalar(s.coords()[0] + 1.0), 0.0)
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::usage(format!("gamma must be in (0, 1), got {gamma}")))
    }
}
