//! Generative-model abstraction shared by planners, environments and trials.
//!
//! Planners never see transition kernels. They only call [`step`] on a
//! [`GenerativeModel`] with a [`Stream`] derived from a [`StreamKey`], so every
//! simulated sample is addressed by `(seed, path)` and can be replayed.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of `R^d`. Queue environments store integer lengths as reals.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(SmallVec<[f64; 4]>);

impl State {
    pub fn new(coords: impl IntoIterator<Item = f64>) -> Self {
        State(coords.into_iter().collect())
    }

    pub fn zeros(d: usize) -> Self {
        State(SmallVec::from_elem(0.0, d))
    }

    pub fn scalar(x: f64) -> Self {
        State(SmallVec::from_slice(&[x]))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(SmallVec::from_vec(v))
    }
}

impl<const N: usize> From<[f64; N]> for State {
    fn from(v: [f64; N]) -> Self {
        State(v.iter().copied().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A black-box MDP sampler: `(state, action, stream) -> (next state, reward)`.
///
/// Implementations must be pure given the stream: the same stream state
/// yields the same sample. Models are immutable and shared across trials.
pub trait GenerativeModel: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn action_count(&self) -> usize;

    /// Upper bound on every emitted reward.
    fn r_max(&self) -> f64;

    fn gamma(&self) -> f64;

    /// Raw transition. Callers go through [`step`], which checks the contract.
    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64);

    fn v_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma())
    }
}

impl<M: GenerativeModel + ?Sized> GenerativeModel for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn action_count(&self) -> usize {
        (**self).action_count()
    }
    fn r_max(&self) -> f64 {
        (**self).r_max()
    }
    fn gamma(&self) -> f64 {
        (**self).gamma()
    }
    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64) {
        (**self).sample(s, a, stream)
    }
}

impl<M: GenerativeModel + ?Sized> GenerativeModel for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn action_count(&self) -> usize {
        (**self).action_count()
    }
    fn r_max(&self) -> f64 {
        (**self).r_max()
    }
    fn gamma(&self) -> f64 {
        (**self).gamma()
    }
    fn sample(&self, s: &State, a: ActionId, stream: &mut Stream) -> (State, f64) {
        (**self).sample(s, a, stream)
    }
}

pub fn check_input<M: GenerativeModel + ?Sized>(model: &M, s: &State, a: ActionId) -> Result<()> {
    if s.dim() != model.dimension() {
        return Err(Error::usage(format!(
            "state has dimension {}, model {} expects {}",
            s.dim(),
            model.name(),
            model.dimension()
        )));
    }
    if a.0 >= model.action_count() {
        return Err(Error::usage(format!(
            "action {} out of range for model {} with {} actions",
            a.0,
            model.name(),
            model.action_count()
        )));
    }
    Ok(())
}

/// Checked transition: validates the inputs and the emitted sample.
///
/// A reward outside `[0, r_max]` or a non-finite next state is a contract
/// error; trials abort on it.
pub fn step<M: GenerativeModel + ?Sized>(
    model: &M,
    s: &State,
    a: ActionId,
    stream: &mut Stream,
) -> Result<(State, f64)> {
    check_input(model, s, a)?;
    let (next, r) = model.sample(s, a, stream);
    if !(0.0..=model.r_max()).contains(&r) {
        return Err(Error::contract(format!(
            "model {} emitted reward {r} outside [0, {}]",
            model.name(),
            model.r_max()
        )));
    }
    if next.dim() != model.dimension() || !next.is_finite() {
        return Err(Error::contract(format!(
            "model {} emitted malformed next state {next:?}",
            model.name()
        )));
    }
    Ok((next, r))
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of a random sub-stream: a master seed plus a path of child
/// indices. The path is folded into a 64-bit digest as it is extended, so
/// deriving a child is allocation-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    digest: u64,
    depth: u32,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey {
            seed,
            digest: splitmix(seed ^ 0x5EED_5EED_5EED_5EED),
            depth: 0,
        }
    }

    /// Key for path `path` under `seed`.
    pub fn with_path(seed: u64, path: &[u64]) -> Self {
        path.iter().fold(Self::new(seed), |k, &i| k.child(i))
    }

    pub fn child(&self, index: u64) -> Self {
        let salted = splitmix(index ^ u64::from(self.depth).wrapping_mul(GOLDEN));
        StreamKey {
            seed: self.seed,
            digest: splitmix(self.digest.rotate_left(17) ^ salted),
            depth: self.depth + 1,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn stream(&self) -> Stream {
        Stream(Xoshiro256PlusPlus::seed_from_u64(self.digest))
    }
}

/// Derive the sub-stream for `child` under `key`.
pub fn derive_stream(key: &StreamKey, child: u64) -> Stream {
    key.child(child).stream()
}

/// A deterministic random stream.
#[derive(Clone, Debug)]
pub struct Stream(Xoshiro256PlusPlus);

impl Stream {
    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
