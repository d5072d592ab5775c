//! Sparse-sampling Monte Carlo estimates of `Q*` at a single state.
//!
//! Two oracles share one backup rule: leaves at depth `H` get value zero and
//! each internal node averages `r + γ V̂(child)` over its `C` samples per
//! action, with `V̂ = max_a Q̂`.
//!
//! - [`sparse`] builds the full `(|A|·C)`-ary tree.
//! - [`grid`] snaps every sampled child onto the lattice `εZ^d` and reuses the
//!   samples of any lattice point it has already expanded.

pub mod grid;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{estimate_q_grid, grid_params, snap, GridCache, GridParams};
pub use sparse::{estimate_q, sparse_params, SparseParams};

/// Root Q-value estimates and the number of fresh simulator calls spent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub values: Vec<f64>,
    pub samples_used: u64,
}

impl QEstimate {
    pub fn max_abs_error(&self, truth: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Relative slack when comparing `γ^H` against `δ`, so that exact powers
/// such as `0.1² = 0.01` are not pushed to the next horizon by rounding.
pub const HORIZON_RTOL: f64 = 1e-12;

/// Smallest `H >= 1` with `γ^H <= δ`, i.e. `⌈log_γ δ⌉` robust to rounding.
pub fn horizon_for(delta: f64, gamma: f64) -> Result<u32> {
    check_unit("delta", delta)?;
    check_unit("gamma", gamma)?;
    let within = |h: u32| gamma.powi(h as i32) <= delta * (1.0 + HORIZON_RTOL);
    let mut h = (delta.ln() / gamma.ln()).ceil().max(1.0) as u32;
    while h > 1 && within(h - 1) {
        h -= 1;
    }
    while !within(h) {
        h += 1;
    }
    Ok(h)
}

/// Error radius of a `δ`-accurate oracle: `ε = 2 R_max δ / (1 - γ)`.
pub fn eps_of_delta(delta: f64, r_max: f64, gamma: f64) -> f64 {
    2.0 * r_max * delta / (1.0 - gamma)
}

pub(crate) fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::usage(format!("{name} must be in (0, 1), got {x}")))
    }
}

/// `Σ_{h=1..H} (|A|C)^h`, the size of a full sparse-sampling tree, or
/// `None` on overflow.
pub fn full_tree_calls(action_count: usize, width: u64, horizon: u32) -> Option<u64> {
    let branch = (action_count as u64).checked_mul(width)?;
    let mut level = 1u64;
    let mut total = 0u64;
    for _ in 0..horizon {
        level = level.checked_mul(branch)?;
        total = total.checked_add(level)?;
    }
    Some(total)
}
