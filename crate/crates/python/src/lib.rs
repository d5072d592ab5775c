//! Python bindings for the planner, the stability diagnostics and the
//! experiment harness.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use stableplan::adaptive::{TunerConfig, TunerState as CoreTuner};
use stableplan::config::ExperimentConfig;
use stableplan::environments::{self, FiniteMdp, QueueNetwork, ReflectedWalk};
use stableplan::harness::{self, Mode};
use stableplan::oracle::{estimate_q_grid, GridCache, GridParams, SparseParams};
use stableplan::policy;
use stableplan::stability::{self, LyapunovSpec, Norm, RhoVariant};
use stableplan::{ActionId, Error, GenerativeModel, State, StreamKey};

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) | Error::Parse { .. } => PyIOError::new_err(e.to_string()),
        Error::Usage(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

enum Inner {
    Queue(QueueNetwork),
    Walk(ReflectedWalk),
    Finite(FiniteMdp),
}

/// A generative model: queue network, reflected walk or finite MDP.
#[pyclass(module = "stableplan_py", frozen)]
struct Model {
    inner: Inner,
}

impl Model {
    fn model(&self) -> &dyn GenerativeModel {
        match &self.inner {
            Inner::Queue(m) => m,
            Inner::Walk(m) => m,
            Inner::Finite(m) => m,
        }
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (arrivals, services, gamma, reward_scale = 1.0))]
    fn queue_network(arrivals: Vec<f64>, services: Vec<f64>, gamma: f64, reward_scale: f64) -> PyResult<Self> {
        let m = QueueNetwork::new(arrivals, services, reward_scale, gamma).map_err(to_py)?;
        Ok(Model { inner: Inner::Queue(m) })
    }

    #[staticmethod]
    fn reflected_walk(p_up: f64, gamma: f64) -> PyResult<Self> {
        let m = ReflectedWalk::new(p_up, gamma).map_err(to_py)?;
        Ok(Model { inner: Inner::Walk(m) })
    }

    /// `transitions[s * n_actions + a]` is the next-state distribution.
    #[staticmethod]
    fn finite(n_states: usize, n_actions: usize, transitions: Vec<Vec<f64>>, rewards: Vec<f64>, gamma: f64) -> PyResult<Self> {
        let m = FiniteMdp::new(n_states, n_actions, transitions, rewards, gamma).map_err(to_py)?;
        Ok(Model { inner: Inner::Finite(m) })
    }

    #[getter]
    fn name(&self) -> String {
        self.model().name().to_string()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.model().dimension()
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.model().action_count()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.model().gamma()
    }

    /// One checked transition drawn from the stream `(seed, path)`.
    #[pyo3(signature = (state, action, seed, path = Vec::new()))]
    fn step(&self, state: Vec<f64>, action: usize, seed: u64, path: Vec<u64>) -> PyResult<(Vec<f64>, f64)> {
        let mut stream = StreamKey::with_path(seed, &path).stream();
        let (next, r) = stableplan::step(self.model(), &State::from(state), ActionId(action), &mut stream)
            .map_err(to_py)?;
        Ok((next.coords().to_vec(), r))
    }

    /// Optimal Q-table of a finite model by value iteration.
    #[pyo3(signature = (tol = 1e-12))]
    fn exact_q(&self, tol: f64) -> PyResult<Vec<Vec<f64>>> {
        match &self.inner {
            Inner::Finite(m) => Ok(environments::exact_q(m, tol).map_err(to_py)?.values),
            _ => Err(PyValueError::new_err("exact_q needs a finite model")),
        }
    }

    fn __repr__(&self) -> String {
        let m = self.model();
        format!("Model({}, d={}, |A|={}, gamma={})", m.name(), m.dimension(), m.action_count(), m.gamma())
    }
}

/// Root Q-value estimates and fresh simulator calls. Passing `epsilon`
/// selects the grid oracle.
#[pyfunction]
#[pyo3(signature = (model, state, horizon, width, seed, epsilon = None, nu_prime = 1.0, cap = None))]
#[allow(clippy::too_many_arguments)]
fn estimate_q(
    model: &Model,
    state: Vec<f64>,
    horizon: u32,
    width: u64,
    seed: u64,
    epsilon: Option<f64>,
    nu_prime: f64,
    cap: Option<u64>,
) -> PyResult<(Vec<f64>, u64)> {
    let m = model.model();
    let s = State::from(state);
    let key = StreamKey::new(seed);
    let cap = cap.unwrap_or(u64::MAX);
    let est = match epsilon {
        None => {
            let p = SparseParams::explicit(m.gamma(), horizon, width).map_err(to_py)?;
            stableplan::oracle::estimate_q(m, &s, &p, &key, cap)
        }
        Some(eps) => {
            let p = GridParams::explicit(m.gamma(), horizon, width, eps, m.dimension(), nu_prime).map_err(to_py)?;
            estimate_q_grid(m, &s, &p, &mut GridCache::new(), &key, cap)
        }
    }
    .map_err(to_py)?;
    Ok((est.values, est.samples_used))
}

#[pyfunction]
fn boltzmann(q: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    Ok(policy::boltzmann(&q, tau).map_err(to_py)?.probs().to_vec())
}

#[pyfunction]
fn tau_of_alpha(alpha: f64, nu: f64, gamma: f64, r_max: f64, action_count: usize, delta_min: f64) -> PyResult<f64> {
    policy::tau_of_alpha(alpha, nu, gamma, r_max, action_count, delta_min).map_err(to_py)
}

fn spec(nu: f64, alpha: f64, b: f64) -> LyapunovSpec {
    LyapunovSpec {
        norm: Norm::L2,
        nu,
        nu_prime: nu,
        b,
        alpha,
        c1: 1.0,
        c2: 0.0,
    }
}

fn variant(name: &str) -> PyResult<RhoVariant> {
    name.parse().map_err(to_py)
}

/// `c`, `η` and `ρ` for increments bounded by `nu` and drift `alpha` above `b`.
#[pyfunction]
#[pyo3(signature = (nu, alpha, b = 0.0, rho_variant = "proof"))]
fn hajek_constants<'py>(py: Python<'py>, nu: f64, alpha: f64, b: f64, rho_variant: &str) -> PyResult<Bound<'py, PyAny>> {
    let k = stability::hajek_constants_with(&spec(nu, alpha, b), alpha, variant(rho_variant)?).map_err(to_py)?;
    json_to_py(py, &k)
}

/// Bound on `P(L(s_t) >= level)`; `t = None` is the stationary limit.
#[pyfunction]
#[pyo3(signature = (nu, alpha, b, l0, level, t = None, rho_variant = "proof"))]
fn tail_bound(nu: f64, alpha: f64, b: f64, l0: f64, level: f64, t: Option<u64>, rho_variant: &str) -> PyResult<f64> {
    let k = stability::hajek_constants_with(&spec(nu, alpha, b), alpha, variant(rho_variant)?).map_err(to_py)?;
    Ok(stability::tail_bound(&k, l0, level, t).raw)
}

/// The δ-halving tuner.
#[pyclass(module = "stableplan_py")]
struct Tuner {
    inner: CoreTuner,
}

#[pymethods]
impl Tuner {
    #[new]
    #[pyo3(signature = (t0 = 10, floor = 1.0 / 1_048_576.0))]
    fn new(t0: u64, floor: f64) -> PyResult<Self> {
        Ok(Tuner {
            inner: CoreTuner::new(TunerConfig { t0, floor }).map_err(to_py)?,
        })
    }

    /// Tests the state at time `t`; returns whether δ was halved.
    fn observe(&mut self, t: u64, state: Vec<f64>) -> PyResult<bool> {
        self.inner.observe(t, &State::from(state)).map_err(to_py)
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    #[getter]
    fn halving_count(&self) -> u32 {
        self.inner.halving_count()
    }

    fn halving_times(&self) -> Vec<u64> {
        self.inner.halving_times()
    }
}

/// Runs an experiment from TOML text. Writes the output directory when
/// `out` is given and returns `{"report": ..., "summary": ...}`.
#[pyfunction]
#[pyo3(signature = (config, out = None, tune = false))]
fn run_experiment<'py>(py: Python<'py>, config: &str, out: Option<&str>, tune: bool) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let mode = if tune { Mode::Tune } else { Mode::Run };
    let result = py.detach(|| harness::run_experiment(&cfg, mode)).map_err(to_py)?;
    if let Some(dir) = out {
        harness::write_outputs(Path::new(dir), &cfg, &result).map_err(to_py)?;
    }
    let both = serde_json::json!({ "report": result.report, "summary": result.summary });
    json_to_py(py, &both)
}

/// Recomputes the stability report of a run directory from its files.
#[pyfunction]
#[pyo3(signature = (dir, theta = None))]
fn analyze<'py>(py: Python<'py>, dir: &str, theta: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let report = harness::analyze(Path::new(dir), theta).map_err(to_py)?;
    json_to_py(py, &report)
}

/// The rendered parameter sheet for a TOML configuration.
#[pyfunction]
fn params(config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    Ok(harness::params(&cfg).map_err(to_py)?.render())
}

#[pymodule]
fn stableplan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Tuner>()?;
    m.add_function(wrap_pyfunction!(estimate_q, m)?)?;
    m.add_function(wrap_pyfunction!(boltzmann, m)?)?;
    m.add_function(wrap_pyfunction!(tau_of_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(hajek_constants, m)?)?;
    m.add_function(wrap_pyfunction!(tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(params, m)?)?;
    Ok(())
}
