//! Boltzmann action selection and the temperature rule that makes it stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Stream};

/// A distribution over actions; entries are nonnegative and sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::usage("action probabilities must be nonnegative and non-empty"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::usage(format!("action probabilities sum to {total}")));
        }
        Ok(ActionDistribution { probs })
    }

    pub fn uniform(n: usize) -> Self {
        ActionDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, a: ActionId) -> Self {
        let mut probs = vec![0.0; n];
        probs[a.0] = 1.0;
        ActionDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF lookup of a uniform draw `u ∈ [0, 1)` in action order.
    pub fn quantile(&self, u: f64) -> ActionId {
        let mut acc = 0.0;
        for (a, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionId(a);
            }
        }
        // u fell in the rounding gap above the last partial sum
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        ActionId(last)
    }
}

/// `π(a) ∝ exp(q_a / τ)`, evaluated after subtracting `max q` so that tiny
/// temperatures do not overflow.
pub fn boltzmann(q: &[f64], tau: f64) -> Result<ActionDistribution> {
    if !(tau > 0.0) {
        return Err(Error::usage(format!("temperature must be positive, got {tau}")));
    }
    if q.is_empty() || q.iter().any(|x| !x.is_finite()) {
        return Err(Error::usage("Q-values must be finite and non-empty"));
    }
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q.iter().map(|x| ((x - top) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(ActionDistribution {
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

pub fn sample_action(dist: &ActionDistribution, stream: &mut Stream) -> ActionId {
    dist.quantile(stream.uniform())
}

/// Uniform over the maximizers of `q` (ties are exact equality).
pub fn greedy(q: &[f64]) -> ActionDistribution {
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let count = q.iter().filter(|&&x| x == top).count() as f64;
    ActionDistribution {
        probs: q.iter().map(|&x| if x == top { 1.0 / count } else { 0.0 }).collect(),
    }
}

/// Gap between the best value and the best strictly suboptimal value, or
/// `None` when every action is optimal.
pub fn action_gap(q: &[f64]) -> Option<f64> {
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q.iter()
        .copied()
        .filter(|&x| x < top)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |m| m.max(x))))
        .map(|runner_up| top - runner_up)
}

pub fn tv_distance(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::usage(format!(
            "distributions over {} and {} actions",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// The four candidate temperatures; the stable temperature is their minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauTerms {
    /// `√(α / 24ν)`
    pub drift: f64,
    /// `(1-γ) / 8R_max`
    pub horizon: f64,
    /// `(1-γ)α / (48 R_max |A|² ν)`
    pub estimate: f64,
    /// `Δ_min / ln(24ν|A|/α)`, absent when the log argument is at most one.
    pub gap: Option<f64>,
}

impl TauTerms {
    pub fn min(&self) -> f64 {
        let m = self.drift.min(self.horizon).min(self.estimate);
        self.gap.map_or(m, |g| m.min(g))
    }
}

pub fn tau_terms(
    alpha: f64,
    nu: f64,
    gamma: f64,
    r_max: f64,
    action_count: usize,
    delta_min: f64,
) -> Result<TauTerms> {
    for (name, x) in [("alpha", alpha), ("nu", nu), ("r_max", r_max), ("delta_min", delta_min)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::usage(format!("{name} must be positive, got {x}")));
        }
    }
    crate::oracle::check_unit("gamma", gamma)?;
    if action_count == 0 {
        return Err(Error::usage("action count must be positive"));
    }
    let a = action_count as f64;
    let log_arg = 24.0 * nu * a / alpha;
    Ok(TauTerms {
        drift: (alpha / (24.0 * nu)).sqrt(),
        horizon: (1.0 - gamma) / (8.0 * r_max),
        estimate: (1.0 - gamma) * alpha / (48.0 * r_max * a * a * nu),
        gap: (log_arg > 1.0).then(|| delta_min / log_arg.ln()),
    })
}

/// Largest temperature for which the Boltzmann planner is provably stable.
pub fn tau_of_alpha(
    alpha: f64,
    nu: f64,
    gamma: f64,
    r_max: f64,
    action_count: usize,
    delta_min: f64,
) -> Result<f64> {
    Ok(tau_terms(alpha, nu, gamma, r_max, action_count, delta_min)?.min())
}

/// TV bound between Boltzmann policies built from Q-values at most `eps`
/// apart: `(|A|²/2) · (e^{2ε/τ} - 1)/(e^{2ε/τ} + 1)`.
pub fn perturbation_bound(eps: f64, tau: f64, action_count: usize) -> f64 {
    let a = action_count as f64;
    // (e^x - 1)/(e^x + 1) = tanh(x/2)
    0.5 * a * a * (eps / tau).tanh()
}

/// `κ`: TV bound between the Boltzmann policy on estimates and the greedy
/// optimal policy.
pub fn kappa_bound(eps: f64, tau: f64, action_count: usize, delta_min: f64) -> f64 {
    perturbation_bound(eps, tau, action_count)
        + (action_count as f64 - 1.0) * (-delta_min / tau).exp()
}

/// Drift of `L` above `B` under a policy that is `κ`-close to optimal except
/// with probability `δ`: `4ν((1-δ)κ + δ) - α`.
pub fn perturbed_drift(nu: f64, kappa: f64, delta: f64, alpha: f64) -> f64 {
    4.0 * nu * ((1.0 - delta) * kappa + delta) - alpha
}
