//! ε-grid sparse-sampling oracle with per-lattice-point sample reuse.
//!
//! The root is expanded at its exact coordinates. Every sampled child is
//! snapped to the nearest point of `εZ^d` (ties to even) before recursion, and
//! the `C` samples per `(lattice point, action)` are drawn once and reused
//! wherever that lattice point reappears in the tree. Sample streams are keyed
//! by lattice coordinates, so results do not depend on traversal order.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::sparse::max_value;
use super::{check_unit, horizon_for, QEstimate};
use crate::error::{Error, Result};
use crate::mdp::{check_input, step, ActionId, GenerativeModel, State, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub delta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Set only for accuracy-driven parameters.
    pub zeta: Option<f64>,
    pub dimension: usize,
    pub horizon: u32,
    pub width: u64,
    pub width_raw: f64,
    pub nu_prime: f64,
    /// Lattice-point bound `⌈(2Hν'/ε + 1)^d⌉`.
    pub grid_bound: f64,
}

impl GridParams {
    /// Operational parameters with explicit `(H, C, ε)`.
    pub fn explicit(
        gamma: f64,
        horizon: u32,
        width: u64,
        epsilon: f64,
        dimension: usize,
        nu_prime: f64,
    ) -> Result<Self> {
        check_unit("gamma", gamma)?;
        if horizon == 0 || width == 0 {
            return Err(Error::usage("horizon and width must be at least 1"));
        }
        check_positive("epsilon", epsilon)?;
        check_positive("nu_prime", nu_prime)?;
        Ok(GridParams {
            delta: gamma.powi(horizon as i32),
            gamma,
            epsilon,
            zeta: None,
            dimension,
            horizon,
            width,
            width_raw: width as f64,
            nu_prime,
            grid_bound: grid_bound(horizon, nu_prime, epsilon, dimension),
        })
    }

    /// Ceiling on fresh simulator calls: `|A| · C · N(H, ε)`.
    pub fn call_ceiling(&self, action_count: usize) -> f64 {
        action_count as f64 * self.width as f64 * self.grid_bound
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::usage(format!("{name} must be positive, got {x}")))
    }
}

pub fn grid_bound(horizon: u32, nu_prime: f64, epsilon: f64, dimension: usize) -> f64 {
    (2.0 * f64::from(horizon) * nu_prime / epsilon + 1.0)
        .powi(dimension as i32)
        .ceil()
}

/// Accuracy-driven grid parameters:
/// `H = ⌈log_γ δ⌉`, `ε = δ V_max (1-γ) / (2ζγ√d)` and
/// `C = ⌈2γ²/((1-γ)²δ²) · (ln(2|A|/δ) + d ln H + d ln(1/ε))⌉`.
pub fn grid_params(
    delta: f64,
    gamma: f64,
    zeta: f64,
    dimension: usize,
    v_max: f64,
    action_count: usize,
    nu_prime: f64,
) -> Result<GridParams> {
    let horizon = horizon_for(delta, gamma)?;
    check_unit("delta", delta)?;
    check_positive("zeta", zeta)?;
    check_positive("v_max", v_max)?;
    check_positive("nu_prime", nu_prime)?;
    if dimension == 0 || action_count == 0 {
        return Err(Error::usage("dimension and action count must be positive"));
    }
    let d = dimension as f64;
    let epsilon = delta * v_max * (1.0 - gamma) / (2.0 * zeta * gamma * d.sqrt());
    let lead = 2.0 * gamma * gamma / ((1.0 - gamma).powi(2) * delta * delta);
    let logs = (2.0 * action_count as f64 / delta).ln()
        + d * f64::from(horizon).ln()
        + d * (1.0 / epsilon).ln();
    let width_raw = lead * logs;
    let width = if width_raw >= u64::MAX as f64 {
        u64::MAX
    } else {
        width_raw.ceil().max(1.0) as u64
    };
    Ok(GridParams {
        delta,
        gamma,
        epsilon,
        zeta: Some(zeta),
        dimension,
        horizon,
        width,
        width_raw,
        nu_prime,
        grid_bound: grid_bound(horizon, nu_prime, epsilon, dimension),
    })
}

pub type Cell = SmallVec<[i64; 4]>;

fn cell_of(s: &State, epsilon: f64) -> Cell {
    s.coords()
        .iter()
        .map(|x| (x / epsilon).round_ties_even() as i64)
        .collect()
}

fn cell_state(cell: &Cell, epsilon: f64) -> State {
    State::new(cell.iter().map(|&k| k as f64 * epsilon))
}

/// Nearest lattice point of `εZ^d`, rounding half-way coordinates to even.
pub fn snap(s: &State, epsilon: f64) -> State {
    cell_state(&cell_of(s, epsilon), epsilon)
}

#[derive(Clone, Debug)]
struct Sample {
    cell: Cell,
    reward: f64,
}

/// Per-lattice-point samples. One cache normally lives for one oracle call;
/// entries are written once and never modified.
#[derive(Clone, Debug, Default)]
pub struct GridCache {
    // cell -> per action -> C samples
    entries: FxHashMap<Cell, Vec<Vec<Sample>>>,
}

impl GridCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of distinct lattice points with recorded samples.
    pub fn distinct_states(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, s: &State, epsilon: f64) -> bool {
        self.entries.contains_key(&cell_of(s, epsilon))
    }

    /// Recorded `(next lattice point, reward)` samples for `(s, a)`.
    pub fn samples(&self, s: &State, a: ActionId, epsilon: f64) -> Option<Vec<(State, f64)>> {
        self.entries.get(&cell_of(s, epsilon)).map(|per_action| {
            per_action[a.0]
                .iter()
                .map(|x| (cell_state(&x.cell, epsilon), x.reward))
                .collect()
        })
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

const TAG_CELL: u64 = 0;
const TAG_ROOT: u64 = 1;

struct Planner<'a, M: ?Sized> {
    model: &'a M,
    params: &'a GridParams,
    cache: &'a mut GridCache,
    key: StreamKey,
    cap: u64,
    calls: u64,
    memo: FxHashMap<(Cell, u32), f64>,
}

impl<M: GenerativeModel + ?Sized> Planner<'_, M> {
    fn draw(&mut self, s: &State, key: StreamKey) -> Result<Vec<Vec<Sample>>> {
        let actions = self.model.action_count();
        let batch = actions as u64 * self.params.width;
        let needed = self.calls.saturating_add(batch);
        if needed > self.cap {
            return Err(Error::Budget {
                needed,
                cap: self.cap,
            });
        }
        let mut out = Vec::with_capacity(actions);
        for a in 0..actions {
            let mut stream = key.child(a as u64).stream();
            let mut samples = Vec::with_capacity(self.params.width as usize);
            for _ in 0..self.params.width {
                let (next, reward) = step(self.model, s, ActionId(a), &mut stream)?;
                samples.push(Sample {
                    cell: cell_of(&next, self.params.epsilon),
                    reward,
                });
            }
            out.push(samples);
        }
        self.calls += batch;
        Ok(out)
    }

    fn cell_key(&self, cell: &Cell) -> StreamKey {
        cell.iter()
            .fold(self.key.child(TAG_CELL), |k, &c| k.child(c as u64))
    }

    fn ensure(&mut self, cell: &Cell) -> Result<()> {
        if !self.cache.entries.contains_key(cell) {
            let s = cell_state(cell, self.params.epsilon);
            let samples = self.draw(&s, self.cell_key(cell))?;
            self.cache.entries.insert(cell.clone(), samples);
        }
        Ok(())
    }

    fn backup(&mut self, per_action: &[Vec<(Cell, f64)>], child_level: u32) -> Result<Vec<f64>> {
        let gamma = self.params.gamma;
        let mut q = Vec::with_capacity(per_action.len());
        for samples in per_action {
            let mut total = 0.0;
            for (cell, r) in samples {
                total += r + gamma * self.value(cell, child_level)?;
            }
            q.push(total / samples.len() as f64);
        }
        Ok(q)
    }

    fn cell_q(&mut self, cell: &Cell, level: u32) -> Result<Vec<f64>> {
        self.ensure(cell)?;
        let children: Vec<Vec<(Cell, f64)>> = self.cache.entries[cell]
            .iter()
            .map(|v| v.iter().map(|x| (x.cell.clone(), x.reward)).collect())
            .collect();
        self.backup(&children, level + 1)
    }

    fn value(&mut self, cell: &Cell, level: u32) -> Result<f64> {
        if level >= self.params.horizon {
            return Ok(0.0);
        }
        let memo_key = (cell.clone(), level);
        if let Some(&v) = self.memo.get(&memo_key) {
            return Ok(v);
        }
        let v = max_value(&self.cell_q(cell, level)?);
        self.memo.insert(memo_key, v);
        Ok(v)
    }
}

/// Root estimates `Q̂⁰(s, ·)` from the ε-grid tree.
///
/// `samples_used` counts fresh simulator calls only; samples already in
/// `cache` are free. Fails with [`Error::Budget`] as soon as the next batch of
/// `|A|·C` calls would exceed `cap`.
pub fn estimate_q_grid<M: GenerativeModel + ?Sized>(
    model: &M,
    s: &State,
    params: &GridParams,
    cache: &mut GridCache,
    key: &StreamKey,
    cap: u64,
) -> Result<QEstimate> {
    check_input(model, s, ActionId(0))?;
    let root_cell = cell_of(s, params.epsilon);
    let on_grid = cell_state(&root_cell, params.epsilon) == *s;
    let mut planner = Planner {
        model,
        params,
        cache,
        key: *key,
        cap,
        calls: 0,
        memo: FxHashMap::default(),
    };
    let values = if on_grid {
        planner.cell_q(&root_cell, 0)?
    } else {
        let drawn = planner.draw(s, key.child(TAG_ROOT))?;
        let children: Vec<Vec<(Cell, f64)>> = drawn
            .into_iter()
            .map(|v| v.into_iter().map(|x| (x.cell, x.reward)).collect())
            .collect();
        planner.backup(&children, 1)?
    };
    Ok(QEstimate {
        values,
        samples_used: planner.calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{FiniteMdp, TwoQueueConfig};
    use crate::oracle::sparse::{estimate_q, SparseParams};

    #[test]
    fn snapping_examples() {
        assert_eq!(snap(&State::from([0.26, -0.11]), 0.25), State::from([0.25, 0.0]));
        assert_eq!(snap(&State::zeros(2), 0.3), State::zeros(2));
        assert_eq!(snap(&State::scalar(0.125), 0.25), State::scalar(0.0));
        assert_eq!(snap(&State::scalar(0.375), 0.25), State::scalar(0.5));
        assert_eq!(snap(&State::scalar(-0.125), 0.25), State::scalar(0.0));
    }

    #[test]
    fn formula_grid_parameters() {
        let p = grid_params(0.1, 0.9, 2.0, 2, 10.0, 2, 1.0).unwrap();
        let expected = 0.1 * 10.0 * 0.1 / (2.0 * 2.0 * 0.9 * 2f64.sqrt());
        assert!((p.epsilon - expected).abs() < 1e-15);
        assert!((p.epsilon - 0.019642).abs() < 5e-7);
        assert_eq!(p.horizon, 22);
        let q = grid_params(0.1, 0.9, 4.0, 2, 10.0, 2, 1.0).unwrap();
        assert!((q.epsilon * 2.0 - p.epsilon).abs() < 1e-15);
        assert!(grid_params(0.1, 0.9, 0.0, 2, 10.0, 2, 1.0).is_err());
    }

    #[test]
    fn width_formula() {
        let p = grid_params(0.5, 0.5, 1.0, 1, 2.0, 2, 1.0).unwrap();
        // eps = 0.5*2*0.5/(2*1*0.5*1) = 0.5, H = 1
        assert_eq!(p.horizon, 1);
        assert!((p.epsilon - 0.5).abs() < 1e-15);
        let lead = 2.0 * 0.25 / (0.25 * 0.25);
        let raw = lead * (8f64.ln() + 0.0 + 2f64.ln());
        assert!((p.width_raw - raw).abs() < 1e-12);
        assert_eq!(p.width, raw.ceil() as u64);
        assert_eq!(p.grid_bound, (2.0 * 1.0 / 0.5 + 1.0f64).ceil());
    }

    #[test]
    fn self_loop_on_grid_memoizes() {
        let m = FiniteMdp::self_loop(2, 1.0, 0.5).unwrap();
        let p = GridParams::explicit(0.5, 3, 1, 1.0, 1, 1.0).unwrap();
        let mut cache = GridCache::new();
        let est = estimate_q_grid(&m, &m.state(0), &p, &mut cache, &StreamKey::new(0), u64::MAX)
            .unwrap();
        assert_eq!(est.values, vec![1.75, 1.75]);
        assert_eq!(est.samples_used, 2);
        assert_eq!(cache.distinct_states(), 1);
        assert!(cache.contains(&m.state(0), 1.0));
        assert_eq!(
            cache.samples(&m.state(0), ActionId(1), 1.0).unwrap(),
            vec![(m.state(0), 1.0)]
        );
    }

    #[test]
    fn one_level_matches_vanilla() {
        let m = FiniteMdp::new(
            2,
            2,
            vec![vec![0.5, 0.5], vec![0.1, 0.9], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.3, 0.6, 0.0, 1.0],
            0.9,
        )
        .unwrap();
        let g = GridParams::explicit(0.9, 1, 5, 1.0, 1, 1.0).unwrap();
        let v = SparseParams::explicit(0.9, 1, 5).unwrap();
        for s in 0..2 {
            let a = estimate_q_grid(&m, &m.state(s), &g, &mut GridCache::new(), &StreamKey::new(1), u64::MAX)
                .unwrap();
            let b = estimate_q(&m, &m.state(s), &v, &StreamKey::new(2), u64::MAX).unwrap();
            assert_eq!(a.values, b.values);
            assert_eq!(a.samples_used, b.samples_used);
        }
    }

    #[test]
    fn off_grid_root_is_not_snapped() {
        // Reward depends on the exact root coordinate.
        let m = crate::environments::UnitInterval { gamma: 0.5 };
        let p = GridParams::explicit(0.5, 1, 3, 0.25, 1, 1.0).unwrap();
        let est = estimate_q_grid(&m, &State::scalar(0.3), &p, &mut GridCache::new(), &StreamKey::new(0), u64::MAX)
            .unwrap();
        assert!((est.values[0] - 0.09).abs() < 1e-15);
        assert_eq!(est.samples_used, 6);
    }

    #[test]
    fn budget_guard_mid_tree() {
        let net = TwoQueueConfig {
            lambda: [0.3, 0.3],
            mu: [0.8, 0.8],
            reward_scale: 1.0,
        }
        .model(0.9)
        .unwrap();
        let p = GridParams::explicit(0.9, 3, 10, 1.0, 2, 2f64.sqrt()).unwrap();
        let e = estimate_q_grid(&net, &State::from([4.0, 4.0]), &p, &mut GridCache::new(), &StreamKey::new(0), 45)
            .unwrap_err();
        assert!(matches!(e, Error::Budget { needed: 60, cap: 45 }));
    }

    #[test]
    fn calls_are_batch_multiples_and_bounded() {
        let net = TwoQueueConfig {
            lambda: [0.3, 0.3],
            mu: [0.8, 0.8],
            reward_scale: 1.0,
        }
        .model(0.9)
        .unwrap();
        let p = GridParams::explicit(0.9, 3, 10, 1.0, 2, 1.0).unwrap();
        for seed in 0..20 {
            let mut cache = GridCache::new();
            let s = State::from([(seed % 5) as f64, 3.0]);
            let est = estimate_q_grid(&net, &s, &p, &mut cache, &StreamKey::new(seed), u64::MAX).unwrap();
            assert_eq!(est.samples_used, 20 * cache.distinct_states() as u64);
            assert!(cache.distinct_states() as f64 <= p.grid_bound);
            let again = estimate_q_grid(&net, &s, &p, &mut GridCache::new(), &StreamKey::new(seed), u64::MAX)
                .unwrap();
            assert_eq!(est, again);
            // A warm cache needs no fresh samples for the same query.
            let warm = estimate_q_grid(&net, &s, &p, &mut cache, &StreamKey::new(seed), u64::MAX).unwrap();
            assert_eq!(warm.samples_used, 0);
            assert_eq!(warm.values, est.values);
        }
    }
}
