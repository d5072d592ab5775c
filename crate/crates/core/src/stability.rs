//! Lyapunov drift diagnostics.
//!
//! For a process whose Lyapunov value `L` moves by at most `ν` per step and
//! drifts down by at least `α` whenever `L > B`, the exponential-moment
//! argument gives, with `c = e^ν - ν - 1`, `η = min(1, α/2c)` and
//! `ρ = 1 - ηα/2`:
//!
//! ```text
//! P(L(s_t) >= b | s_0)  <=  ρ^t e^{η(L(s_0) - b)} + (1 - ρ^t)/(1 - ρ) · e^{ν + η(B - b)}
//! P(T_a > k | s_0)      <=  e^{η(L(s_0) - a)} ρ^k          for a >= B
//! ```
//!
//! This module evaluates those bounds and the matching empirical quantities
//! (drift, cross-trajectory tails, return times) on logged trajectories, and
//! folds them into a [`StabilityReport`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::State;
use crate::trajectory::TrajectoryRecord;

pub const REPORT_SCHEMA: &str = "stableplan-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn eval(self, s: &State) -> f64 {
        let c = s.coords();
        match self {
            Norm::L1 => c.iter().map(|x| x.abs()).sum(),
            Norm::L2 => s.norm2(),
            Norm::Linf => c.iter().map(|x| x.abs()).fold(0.0, f64::max),
        }
    }
}

/// A norm-valued Lyapunov function `L(s) = ‖s‖` with its declared constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    #[serde(default)]
    pub norm: Norm,
    /// Bound on `|L(s_{t+1}) - L(s_t)|`.
    pub nu: f64,
    /// Bound on `‖s_{t+1} - s_t‖`.
    pub nu_prime: f64,
    /// Drift threshold `B`.
    pub b: f64,
    /// Drift magnitude `α` above `B`.
    pub alpha: f64,
    /// Lower-bound constants: `L(s) >= c1 ‖s‖₂ + c2`.
    pub c1: f64,
    pub c2: f64,
}

impl LyapunovSpec {
    /// `L = ‖·‖₂` for queue lengths: increments of at most one job per queue.
    pub fn euclidean(dimension: usize, b: f64, alpha: f64) -> Self {
        let step = (dimension as f64).sqrt();
        LyapunovSpec {
            norm: Norm::L2,
            nu: step,
            nu_prime: step,
            b,
            alpha,
            c1: 1.0,
            c2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("nu", self.nu), ("nu_prime", self.nu_prime), ("alpha", self.alpha), ("c1", self.c1)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::usage(format!("Lyapunov constant {name} must be positive, got {x}")));
            }
        }
        if !(self.b >= 0.0 && self.b.is_finite()) || !self.c2.is_finite() {
            return Err(Error::usage("Lyapunov threshold B must be nonnegative and c2 finite"));
        }
        Ok(())
    }

    pub fn value(&self, s: &State) -> f64 {
        self.norm.eval(s)
    }

    /// Evaluates `L(s)` and checks `L(s) >= c1 ‖s‖₂ + c2`.
    pub fn checked_value(&self, s: &State) -> Result<f64> {
        let l = self.value(s);
        let floor = self.c1 * s.norm2() + self.c2;
        if l + 1e-9 * (1.0 + floor.abs()) < floor {
            return Err(Error::contract(format!(
                "L({s:?}) = {l} is below c1·‖s‖₂ + c2 = {floor}"
            )));
        }
        Ok(l)
    }
}

/// Which contraction factor to use. `Proof` is `ρ = 1 - ηα/2`, the value the
/// exponential-moment recursion actually needs; `Statement` is the variant
/// `ρ = 1 - ηα/(2c)` that divides by `c` once more.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoVariant {
    #[default]
    Proof,
    Statement,
}

impl std::str::FromStr for RhoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proof" => Ok(RhoVariant::Proof),
            "statement" => Ok(RhoVariant::Statement),
            _ => Err(Error::usage(format!("unknown rho variant `{s}` (proof | statement)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HajekConstants {
    /// `c(ν) = e^ν - ν - 1`
    pub c: f64,
    pub eta: f64,
    pub rho: f64,
    pub alpha_eff: f64,
    pub nu: f64,
    pub b: f64,
    pub variant: RhoVariant,
}

impl HajekConstants {
    /// `1 - ηα + η²c <= ρ`, the one-step contraction of `E[e^{ηL}]` above `B`.
    pub fn contraction_holds(&self) -> bool {
        let lhs = 1.0 - self.eta * self.alpha_eff + self.eta * self.eta * self.c;
        lhs <= self.rho + 1e-15
    }
}

pub fn hajek_constants(spec: &LyapunovSpec, alpha_eff: f64) -> Result<HajekConstants> {
    hajek_constants_with(spec, alpha_eff, RhoVariant::Proof)
}

/// `c = e^ν - ν - 1`, `η = min(1, α_eff/2c)` and `ρ` per `variant`.
///
/// Pass `spec.alpha` for a process with drift `α`, or `α/2` for the planner
/// policy, whose guaranteed drift is half that of the optimal policy.
pub fn hajek_constants_with(
    spec: &LyapunovSpec,
    alpha_eff: f64,
    variant: RhoVariant,
) -> Result<HajekConstants> {
    if !(alpha_eff > 0.0 && alpha_eff.is_finite()) {
        return Err(Error::usage(format!("effective drift must be positive, got {alpha_eff}")));
    }
    if !(spec.nu > 0.0) {
        return Err(Error::usage(format!("nu must be positive, got {}", spec.nu)));
    }
    let nu = spec.nu;
    let c = nu.exp_m1() - nu;
    let eta = (alpha_eff / (2.0 * c)).min(1.0);
    let rho = match variant {
        RhoVariant::Proof => 1.0 - eta * alpha_eff / 2.0,
        RhoVariant::Statement => 1.0 - eta * alpha_eff / (2.0 * c),
    };
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::usage(format!(
            "contraction factor rho = {rho} outside (0, 1) for nu = {nu}, alpha = {alpha_eff}"
        )));
    }
    Ok(HajekConstants {
        c,
        eta,
        rho,
        alpha_eff,
        nu,
        b: spec.b,
        variant,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub raw: f64,
    /// `raw` clipped to `[0, 1]`.
    pub clipped: f64,
}

/// Tail bound on `P(L(s_t) >= b)` from `L(s_0) = l0`; `t = None` is the
/// `t → ∞` limit `e^{ν + η(B - b)} / (1 - ρ)`.
pub fn tail_bound(k: &HajekConstants, l0: f64, b: f64, t: Option<u64>) -> TailBound {
    let transient_weight = t.map_or(0.0, |t| k.rho.powf(t as f64));
    let raw = transient_weight * (k.eta * (l0 - b)).exp()
        + (1.0 - transient_weight) / (1.0 - k.rho) * (k.nu + k.eta * (k.b - b)).exp();
    TailBound {
        raw,
        clipped: raw.clamp(0.0, 1.0),
    }
}

/// `P(T_a > k) <= e^{η(l0 - a)} ρ^k` for `a >= B`.
pub fn return_time_bound(consts: &HajekConstants, l0: f64, a: f64, k: u64) -> Result<f64> {
    check_level(consts, a)?;
    Ok((consts.eta * (l0 - a)).exp() * consts.rho.powf(k as f64))
}

/// `E[T_a] <= e^{η(l0 - a)} / (1 - ρ)`, summing the tail bound over `k`.
pub fn mean_return_bound(consts: &HajekConstants, l0: f64, a: f64) -> Result<f64> {
    check_level(consts, a)?;
    Ok((consts.eta * (l0 - a)).exp() / (1.0 - consts.rho))
}

fn check_level(consts: &HajekConstants, a: f64) -> Result<()> {
    if a < consts.b {
        Err(Error::usage(format!(
            "return level {a} is below the drift threshold B = {}",
            consts.b
        )))
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Mean of `L(s_{t+1}) - L(s_t)` over steps with `L(s_t) > B`; zero when `n = 0`.
    pub estimate: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub n: u64,
    pub threshold: f64,
    pub max_increment: f64,
    /// Steps with `|ΔL| > ν`.
    pub increment_violations: u64,
}

impl DriftEstimate {
    pub fn bounded_increments(&self) -> bool {
        self.increment_violations == 0
    }
}

pub fn empirical_drift(traj: &TrajectoryRecord, spec: &LyapunovSpec) -> Result<DriftEstimate> {
    if traj.len() < 2 {
        return Err(Error::usage("drift estimation needs at least two time steps"));
    }
    Ok(pooled_drift(std::slice::from_ref(traj), spec))
}

/// Drift pooled over several trajectories (steps in trajectory order).
pub fn pooled_drift(trajs: &[TrajectoryRecord], spec: &LyapunovSpec) -> DriftEstimate {
    let (mut n, mut sum, mut sq) = (0u64, 0.0, 0.0);
    let mut max_increment = 0.0f64;
    let mut violations = 0;
    for traj in trajs {
        for w in traj.rows.windows(2) {
            let d = w[1].lyapunov - w[0].lyapunov;
            max_increment = max_increment.max(d.abs());
            if d.abs() > spec.nu + 1e-9 {
                violations += 1;
            }
            if w[0].lyapunov > spec.b {
                n += 1;
                sum += d;
                sq += d * d;
            }
        }
    }
    let (estimate, half_width) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0)
        } else {
            0.0
        };
        (mean, 1.96 * (var / n as f64).sqrt())
    };
    DriftEstimate {
        estimate,
        half_width,
        n,
        threshold: spec.b,
        max_increment,
        increment_violations: violations,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// Fraction of trajectories with `L(s_t) >= b`.
    pub lyapunov: f64,
    /// Fraction with `‖s_t‖ >= b` in the configured norm.
    pub norm: f64,
    pub n: u64,
    /// Binomial standard error of `lyapunov`.
    pub std_err: f64,
}

/// Cross-trajectory tail frequency at time `t`.
pub fn empirical_tail(
    trajs: &[TrajectoryRecord],
    spec: &LyapunovSpec,
    b: f64,
    t: usize,
) -> Result<TailEstimate> {
    if let Some(short) = trajs.iter().find(|x| x.len() <= t) {
        return Err(Error::usage(format!(
            "trajectory {} has {} steps, tail requested at t={t}",
            short.header.trial,
            short.len()
        )));
    }
    let n = trajs.len() as u64;
    if n == 0 {
        return Ok(TailEstimate {
            lyapunov: 0.0,
            norm: 0.0,
            n,
            std_err: 0.0,
        });
    }
    let hits = trajs.iter().filter(|x| x.rows[t].lyapunov >= b).count() as f64;
    let norm_hits = trajs
        .iter()
        .filter(|x| spec.norm.eval(&x.rows[t].state) >= b)
        .count() as f64;
    let p = hits / n as f64;
    Ok(TailEstimate {
        lyapunov: p,
        norm: norm_hits / n as f64,
        n,
        std_err: (p * (1.0 - p) / n as f64).sqrt(),
    })
}

/// Within-trajectory time-average of `1{L(s_t) >= b}`, pooled over
/// trajectories. Autocorrelated; reported separately from [`empirical_tail`].
pub fn time_average_tail(trajs: &[TrajectoryRecord], b: f64) -> f64 {
    let (hits, total) = trajs.iter().fold((0u64, 0u64), |(h, n), x| {
        let k = x.rows.iter().filter(|r| r.lyapunov >= b).count() as u64;
        (h + k, n + x.len() as u64)
    });
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// First `t >= 0` with `L(s_t) <= a`.
pub fn first_return_time(traj: &TrajectoryRecord, a: f64) -> Option<u64> {
    traj.rows.iter().position(|r| r.lyapunov <= a).map(|t| t as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimes {
    pub level: f64,
    /// Durations of completed excursions above `level`.
    pub samples: Vec<u64>,
    /// Lyapunov value at the first step of each completed excursion.
    pub start_levels: Vec<f64>,
    /// Excursions still above `level` when the trajectory ended.
    pub censored: u64,
}

impl ReturnTimes {
    pub fn mean(&self) -> Option<f64> {
        (!self.samples.is_empty())
            .then(|| self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64)
    }

    pub fn std_err(&self) -> Option<f64> {
        let n = self.samples.len();
        if n < 2 {
            return None;
        }
        let m = self.mean()?;
        let var = self
            .samples
            .iter()
            .map(|&x| (x as f64 - m).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        Some((var / n as f64).sqrt())
    }
}

/// Excursions above `level`: each starts at an up-crossing (or at `t = 0` if
/// the trajectory starts outside) and lasts until the next step with
/// `L <= level`.
pub fn return_times(trajs: &[TrajectoryRecord], level: f64) -> ReturnTimes {
    let mut out = ReturnTimes {
        level,
        samples: Vec::new(),
        start_levels: Vec::new(),
        censored: 0,
    };
    for traj in trajs {
        let mut open: Option<(usize, f64)> = None;
        for (t, row) in traj.rows.iter().enumerate() {
            let outside = row.lyapunov > level;
            match (open, outside) {
                (None, true) => open = Some((t, row.lyapunov)),
                (Some((start, l0)), false) => {
                    out.samples.push((t - start) as u64);
                    out.start_levels.push(l0);
                    open = None;
                }
                _ => {}
            }
        }
        if open.is_some() {
            out.censored += 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Stable,
    NotStable,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Verdicts only speak for the simulated horizon and trial count.
    pub scope: String,
    /// Smallest tested `b` with late-horizon `P(L > b) <= θ`.
    pub boundedness_level: Option<f64>,
    pub boundedness_tail: Option<f64>,
    /// Largest tested level when no level qualified.
    pub max_level_tested: f64,
    pub recurrence_mean: Option<f64>,
    pub recurrence_completed: u64,
    pub recurrence_censored: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictOptions {
    pub theta: f64,
    /// Candidate level sets `{L <= b}`, ascending.
    pub levels: Vec<f64>,
    /// Number of checkpoint times in the final quarter of the horizon.
    pub late_checkpoints: usize,
    /// Levels and times for the report's tail table; times beyond the horizon
    /// are skipped.
    pub tail_levels: Vec<f64>,
    pub tail_times: Vec<u64>,
    /// Drift passed to the tail and return-time bounds; defaults to `spec.alpha`.
    pub alpha_eff: Option<f64>,
    pub rho_variant: RhoVariant,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        VerdictOptions {
            theta: 0.05,
            levels: (0..=100).map(f64::from).collect(),
            late_checkpoints: 10,
            tail_levels: vec![5.0, 10.0, 20.0, 40.0, 80.0],
            tail_times: vec![100, 1_000, 10_000],
            alpha_eff: None,
            rho_variant: RhoVariant::Proof,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub b: f64,
    pub t: u64,
    pub empirical: f64,
    pub empirical_norm: f64,
    pub std_err: f64,
    pub bound: Option<TailBound>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFrequency {
    pub b: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeCell {
    pub level: f64,
    pub completed: u64,
    pub censored: u64,
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    /// Mean Lyapunov value at excursion starts, fed to the bound.
    pub mean_start_level: Option<f64>,
    pub mean_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema: String,
    pub schema_version: u32,
    pub theta: f64,
    pub trajectories: u64,
    pub horizon: u64,
    pub lyapunov: LyapunovSpec,
    pub hajek: Option<HajekConstants>,
    /// Largest `L(s_0)` across trajectories, used in the tail bounds.
    pub initial_lyapunov: f64,
    pub tail: Vec<TailCell>,
    pub time_average_tail: Vec<LevelFrequency>,
    pub return_times: Vec<ReturnTimeCell>,
    pub drift: DriftEstimate,
    pub verdict: Verdict,
}

pub const VERDICT_SCOPE: &str = "desk scale";

fn late_times(horizon: usize, k: usize) -> Vec<usize> {
    let span = horizon / 4;
    let k = k.max(1);
    (0..k).map(|j| horizon - j * span / k).collect()
}

/// Late-horizon `P(L > b)`, averaged over checkpoint times of the final
/// quarter; each term is a cross-trajectory frequency.
fn late_exceedance(trajs: &[TrajectoryRecord], times: &[usize], b: f64) -> f64 {
    // one division over integer counts, so a tail of exactly θ compares exactly
    let hits: usize = times
        .iter()
        .map(|&t| trajs.iter().filter(|x| x.rows[t].lyapunov > b).count())
        .sum();
    hits as f64 / (trajs.len() * times.len()) as f64
}

/// Boundedness and recurrence witnesses over equal-length trajectories.
///
/// Stable requires a level `b` among `options.levels` whose late-horizon
/// exceedance is at most `θ`, and either no excursion above it or at least one
/// completed return. Too little data yields `Inconclusive`.
pub fn stability_verdict(
    trajs: &[TrajectoryRecord],
    spec: &LyapunovSpec,
    options: &VerdictOptions,
) -> Result<StabilityReport> {
    if !(options.theta > 0.0 && options.theta < 1.0) {
        return Err(Error::usage(format!("theta must be in (0, 1), got {}", options.theta)));
    }
    spec.validate()?;
    let rows = trajs.first().map_or(0, |x| x.len());
    if trajs.iter().any(|x| x.len() != rows) {
        return Err(Error::usage("verdict needs trajectories of equal length"));
    }
    let horizon = rows.saturating_sub(1);
    let alpha_eff = options.alpha_eff.unwrap_or(spec.alpha);
    let hajek = hajek_constants_with(spec, alpha_eff, options.rho_variant).ok();
    let initial_lyapunov = trajs
        .iter()
        .map(|x| x.rows[0].lyapunov)
        .fold(0.0, f64::max);
    let mut levels = options.levels.clone();
    levels.sort_by(f64::total_cmp);
    let max_level_tested = levels.last().copied().unwrap_or(0.0);

    let inconclusive = |reason: &str| Verdict {
        status: VerdictStatus::Inconclusive,
        scope: VERDICT_SCOPE.into(),
        boundedness_level: None,
        boundedness_tail: None,
        max_level_tested,
        recurrence_mean: None,
        recurrence_completed: 0,
        recurrence_censored: 0,
        reason: reason.into(),
    };

    if trajs.is_empty() || horizon < 4 || levels.is_empty() {
        let reason = if trajs.is_empty() {
            "no complete trajectories"
        } else if levels.is_empty() {
            "no candidate levels"
        } else {
            "horizon too short for a late-horizon estimate"
        };
        return Ok(StabilityReport {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_SCHEMA_VERSION,
            theta: options.theta,
            trajectories: trajs.len() as u64,
            horizon: horizon as u64,
            lyapunov: *spec,
            hajek,
            initial_lyapunov,
            tail: Vec::new(),
            time_average_tail: Vec::new(),
            return_times: Vec::new(),
            drift: pooled_drift(trajs, spec),
            verdict: inconclusive(reason),
        });
    }

    let times = late_times(horizon, options.late_checkpoints);
    let witness = levels.iter().find_map(|&b| {
        let p = late_exceedance(trajs, &times, b);
        (p <= options.theta).then_some((b, p))
    });

    let return_cell = |level: f64| -> ReturnTimeCell {
        let rt = return_times(trajs, level);
        let mean_start = (!rt.start_levels.is_empty())
            .then(|| rt.start_levels.iter().sum::<f64>() / rt.start_levels.len() as f64);
        let mean_bound = match (hajek.as_ref(), mean_start) {
            (Some(k), Some(l0)) => mean_return_bound(k, l0, level).ok(),
            _ => None,
        };
        ReturnTimeCell {
            level,
            completed: rt.samples.len() as u64,
            censored: rt.censored,
            mean: rt.mean(),
            std_err: rt.std_err(),
            mean_start_level: mean_start,
            mean_bound,
        }
    };

    let verdict = match witness {
        None => Verdict {
            status: VerdictStatus::NotStable,
            scope: VERDICT_SCOPE.into(),
            boundedness_level: None,
            boundedness_tail: None,
            max_level_tested,
            recurrence_mean: None,
            recurrence_completed: 0,
            recurrence_censored: 0,
            reason: format!(
                "late-horizon P(L > b) exceeds theta = {} at every tested level up to {max_level_tested}",
                options.theta
            ),
        },
        Some((b, p)) => {
            let cell = return_cell(b);
            let never_left = cell.completed == 0 && cell.censored == 0;
            let recurrence_mean = if never_left { Some(0.0) } else { cell.mean };
            let (status, reason) = if recurrence_mean.is_some() {
                (
                    VerdictStatus::Stable,
                    format!("level set L <= {b} holds with late tail {p} and returns are observed"),
                )
            } else {
                (
                    VerdictStatus::NotStable,
                    format!("no completed return to L <= {b}; {} censored excursions", cell.censored),
                )
            };
            Verdict {
                status,
                scope: VERDICT_SCOPE.into(),
                boundedness_level: Some(b),
                boundedness_tail: Some(p),
                max_level_tested,
                recurrence_mean,
                recurrence_completed: cell.completed,
                recurrence_censored: cell.censored,
                reason,
            }
        }
    };

    let mut tail = Vec::new();
    let mut tail_times: Vec<u64> = options
        .tail_times
        .iter()
        .copied()
        .filter(|&t| t as usize <= horizon)
        .collect();
    if !tail_times.contains(&(horizon as u64)) {
        tail_times.push(horizon as u64);
    }
    for &t in &tail_times {
        for &b in &options.tail_levels {
            let est = empirical_tail(trajs, spec, b, t as usize)?;
            tail.push(TailCell {
                b,
                t,
                empirical: est.lyapunov,
                empirical_norm: est.norm,
                std_err: est.std_err,
                bound: hajek.as_ref().map(|k| tail_bound(k, initial_lyapunov, b, Some(t))),
            });
        }
    }
    let time_average_tail = options
        .tail_levels
        .iter()
        .map(|&b| LevelFrequency {
            b,
            frequency: time_average_tail(trajs, b),
        })
        .collect();
    let mut return_levels: Vec<f64> = options
        .tail_levels
        .iter()
        .copied()
        .filter(|&a| a >= spec.b)
        .collect();
    if let Some(b) = verdict.boundedness_level {
        if !return_levels.contains(&b) && b >= spec.b {
            return_levels.push(b);
        }
    }
    return_levels.sort_by(f64::total_cmp);
    let return_times = return_levels.into_iter().map(return_cell).collect();

    Ok(StabilityReport {
        schema: REPORT_SCHEMA.into(),
        schema_version: REPORT_SCHEMA_VERSION,
        theta: options.theta,
        trajectories: trajs.len() as u64,
        horizon: horizon as u64,
        lyapunov: *spec,
        hajek,
        initial_lyapunov,
        tail,
        time_average_tail,
        return_times,
        drift: pooled_drift(trajs, spec),
        verdict,
    })
}
