//! Vanilla sparse-sampling oracle over the full look-ahead tree.

use serde::{Deserialize, Serialize};

use super::{check_unit, full_tree_calls, horizon_for, QEstimate};
use crate::error::{Error, Result};
use crate::mdp::{step, ActionId, GenerativeModel, State, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseParams {
    pub delta: f64,
    pub gamma: f64,
    pub horizon: u32,
    pub width: u64,
    /// Unrounded width from the accuracy formula; `NaN`-free, may be huge.
    pub width_raw: f64,
}

impl SparseParams {
    /// Operational parameters with explicit `(H, C)`.
    pub fn explicit(gamma: f64, horizon: u32, width: u64) -> Result<Self> {
        check_unit("gamma", gamma)?;
        if horizon == 0 || width == 0 {
            return Err(Error::usage("horizon and width must be at least 1"));
        }
        Ok(SparseParams {
            delta: gamma.powi(horizon as i32),
            gamma,
            horizon,
            width,
            width_raw: width as f64,
        })
    }

    /// Simulator calls of a full tree, `None` if it overflows `u64`.
    pub fn projected_calls(&self, action_count: usize) -> Option<u64> {
        full_tree_calls(action_count, self.width, self.horizon)
    }

    /// `(|A|C)^H` as a float, for reporting infeasible configurations.
    pub fn projected_calls_f64(&self, action_count: usize) -> f64 {
        (action_count as f64 * self.width_raw.ceil()).powi(self.horizon as i32)
    }
}

/// Accuracy-driven parameters: `H = ⌈log_γ δ⌉` and
/// `C = ⌈k (2H ln(k|A|H) + ln(2/δ))⌉` with `k = 2γ² / (δ²(1-γ)²)`.
pub fn sparse_params(delta: f64, gamma: f64, action_count: usize) -> Result<SparseParams> {
    if action_count == 0 {
        return Err(Error::usage("action count must be positive"));
    }
    let horizon = horizon_for(delta, gamma)?;
    check_unit("delta", delta)?;
    let k = 2.0 * gamma * gamma / (delta * delta * (1.0 - gamma).powi(2));
    let h = f64::from(horizon);
    let width_raw = k * (2.0 * h * (k * action_count as f64 * h).ln() + (2.0 / delta).ln());
    let width = if width_raw >= u64::MAX as f64 {
        u64::MAX
    } else {
        width_raw.ceil().max(1.0) as u64
    };
    Ok(SparseParams {
        delta,
        gamma,
        horizon,
        width,
        width_raw,
    })
}

struct Tree<'a, M: ?Sized> {
    model: &'a M,
    params: &'a SparseParams,
    calls: u64,
}

impl<M: GenerativeModel + ?Sized> Tree<'_, M> {
    // Stream layout under a node key: child(0).child(a) draws the C samples of
    // action a; child(1).child(a*C + c) keys the subtree of sample c.
    fn expand(&mut self, s: &State, depth: u32, key: StreamKey) -> Result<Vec<f64>> {
        let gamma = self.params.gamma;
        let width = self.params.width;
        let last = depth + 1 >= self.params.horizon;
        let draw_key = key.child(0);
        let sub_key = key.child(1);
        let mut q = Vec::with_capacity(self.model.action_count());
        for a in 0..self.model.action_count() {
            let mut stream = draw_key.child(a as u64).stream();
            let mut total = 0.0;
            for c in 0..width {
                let (next, r) = step(self.model, s, ActionId(a), &mut stream)?;
                self.calls += 1;
                let v = if last {
                    0.0
                } else {
                    let child = sub_key.child(a as u64 * width + c);
                    max_value(&self.expand(&next, depth + 1, child)?)
                };
                total += r + gamma * v;
            }
            q.push(total / width as f64);
        }
        Ok(q)
    }
}

pub(crate) fn max_value(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Root estimates `Q̂⁰(s, ·)` from a full depth-`H`, width-`C` tree.
///
/// Fails with [`Error::Budget`] before sampling if the tree would need more
/// than `cap` simulator calls.
pub fn estimate_q<M: GenerativeModel + ?Sized>(
    model: &M,
    s: &State,
    params: &SparseParams,
    key: &StreamKey,
    cap: u64,
) -> Result<QEstimate> {
    crate::mdp::check_input(model, s, ActionId(0))?;
    let needed = params.projected_calls(model.action_count()).unwrap_or(u64::MAX);
    if needed > cap {
        return Err(Error::Budget { needed, cap });
    }
    let mut tree = Tree {
        model,
        params,
        calls: 0,
    };
    let values = tree.expand(s, 0, *key)?;
    debug_assert_eq!(tree.calls, needed);
    Ok(QEstimate {
        values,
        samples_used: tree.calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{FiniteMdp, TwoQueueConfig};

    #[test]
    fn formula_parameter_values() {
        let p = sparse_params(0.1, 0.9, 2).unwrap();
        assert_eq!(p.horizon, 22);
        let p = sparse_params(0.5, 0.5, 2).unwrap();
        assert_eq!(p.horizon, 1);
        // 8 * (2 ln 16 + ln 4) = 55.45
        assert!((p.width_raw - 8.0 * (2.0 * 16f64.ln() + 4f64.ln())).abs() < 1e-12);
        assert_eq!(p.width, 56);
        assert!(sparse_params(1.0, 0.5, 2).is_err());
        assert!(sparse_params(0.5, 1.5, 2).is_err());
    }

    #[test]
    fn self_loop_is_truncated_geometric_sum() {
        let m = FiniteMdp::self_loop(2, 1.0, 0.5).unwrap();
        let p = SparseParams::explicit(0.5, 3, 1).unwrap();
        let est = estimate_q(&m, &m.state(0), &p, &StreamKey::new(0), u64::MAX).unwrap();
        assert_eq!(est.values, vec![1.75, 1.75]);
        assert_eq!(est.samples_used, 2 + 4 + 8);
    }

    #[test]
    fn one_level_tree_is_reward_average() {
        let m = FiniteMdp::new(
            2,
            2,
            vec![vec![0.5, 0.5], vec![0.1, 0.9], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.3, 0.6, 0.0, 1.0],
            0.9,
        )
        .unwrap();
        let p = SparseParams::explicit(0.9, 1, 7).unwrap();
        let est = estimate_q(&m, &m.state(0), &p, &StreamKey::new(5), u64::MAX).unwrap();
        assert!((est.values[0] - 0.3).abs() < 1e-15);
        assert!((est.values[1] - 0.6).abs() < 1e-15);
        assert_eq!(est.samples_used, 14);
    }

    #[test]
    fn budget_guard_fails_fast() {
        let net = TwoQueueConfig {
            lambda: [0.3, 0.3],
            mu: [0.8, 0.8],
            reward_scale: 1.0,
        }
        .model(0.9)
        .unwrap();
        let p = SparseParams::explicit(0.9, 3, 10).unwrap();
        let e = estimate_q(&net, &State::zeros(2), &p, &StreamKey::new(0), 8419).unwrap_err();
        assert!(matches!(e, Error::Budget { needed: 8420, cap: 8419 }));
        let ok = estimate_q(&net, &State::zeros(2), &p, &StreamKey::new(0), 8420).unwrap();
        assert_eq!(ok.samples_used, 8420);
    }

    #[test]
    fn deterministic_given_key() {
        let net = TwoQueueConfig {
            lambda: [0.3, 0.3],
            mu: [0.8, 0.8],
            reward_scale: 1.0,
        }
        .model(0.9)
        .unwrap();
        let p = SparseParams::explicit(0.9, 2, 4).unwrap();
        let s = State::from([2.0, 1.0]);
        let a = estimate_q(&net, &s, &p, &StreamKey::new(9), u64::MAX).unwrap();
        let b = estimate_q(&net, &s, &p, &StreamKey::new(9), u64::MAX).unwrap();
        assert_eq!(a, b);
        let c = estimate_q(&net, &s, &p, &StreamKey::new(10), u64::MAX).unwrap();
        assert_eq!(c.samples_used, a.samples_used);
    }
}
