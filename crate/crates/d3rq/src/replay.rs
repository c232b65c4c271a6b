//! Experience replay.
//!
//! Single-step transitions go in; n-step samples come out. Windows are
//! composed at sample time by walking `(episode, step)` successor links, so
//! changing the horizon needs no re-collection and windows can never mix two
//! episodes. FIFO eviction cannot orphan a window either: a window only
//! extends toward newer records, and newer records are always evicted after
//! older ones.

use crate::envsim::Observation;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

/// One environment step as stored in the buffer. `episode_id` must be unique
/// per episode across all writers; `step_index` counts steps within the
/// episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub truncated: bool,
    pub episode_id: u64,
    pub step_index: u32,
}

/// n-step window starting at some stored transition: accumulated discounted
/// reward `reward_sum` over `horizon <= n` steps, the observation to
/// bootstrap from, its discount `gamma^horizon`, and whether bootstrapping
/// applies (false iff the window hit a true terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSample {
    pub obs: Observation,
    pub action: Vec<f64>,
    pub reward_sum: f64,
    pub horizon: u32,
    pub bootstrap_obs: Observation,
    pub bootstrap_discount: f64,
    pub bootstrap: bool,
}

/// FIFO transition store. Not thread-safe by itself; see [`SharedReplay`].
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: VecDeque<Transition>,
    /// Global index of the front slot; slot i lives at global index base + i.
    base: u64,
    /// (episode, step) -> global index, for successor lookups.
    index: HashMap<(u64, u32), u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, slots: VecDeque::new(), base: 0, index: HashMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.base += self.slots.len() as u64;
        self.slots.clear();
        self.index.clear();
    }

    /// Append a transition, evicting the oldest at capacity.
    pub fn push(&mut self, t: Transition) {
        if self.slots.len() == self.capacity {
            let old = self.slots.pop_front().expect("non-empty at capacity");
            self.index.remove(&(old.episode_id, old.step_index));
            self.base += 1;
        }
        let global = self.base + self.slots.len() as u64;
        self.index.insert((t.episode_id, t.step_index), global);
        self.slots.push_back(t);
    }

    fn slot(&self, global: u64) -> &Transition {
        &self.slots[(global - self.base) as usize]
    }

    /// Compose the n-step window starting at the transition with global
    /// index `start`. The window walks successors of the same episode and
    /// stops at `n` steps, a terminal or truncation, or the end of stored
    /// data (bootstrapping in all but the terminal case).
    fn compose(&self, start: u64, n: u32, gamma: f64) -> NStepSample {
        let first = self.slot(start);
        let episode = first.episode_id;
        let step0 = first.step_index;
        let mut reward_sum = 0.0;
        let mut discount = 1.0;
        let mut horizon = 0u32;
        let mut at = start;
        let (bootstrap, last) = loop {
            let t = self.slot(at);
            reward_sum += discount * t.reward;
            discount *= gamma;
            horizon += 1;
            if t.terminal {
                break (false, t);
            }
            if t.truncated || horizon == n {
                break (true, t);
            }
            match self.index.get(&(episode, step0 + horizon)) {
                Some(&next) => at = next,
                None => break (true, t),
            }
        };
        NStepSample {
            obs: first.obs.clone(),
            action: first.action.clone(),
            reward_sum,
            horizon,
            bootstrap_obs: last.next_obs.clone(),
            bootstrap_discount: discount,
            bootstrap,
        }
    }

    /// Uniformly sample `batch` n-step windows.
    pub fn sample_nstep(
        &self,
        batch: usize,
        n: u32,
        gamma: f64,
        rng: &mut DetRng,
    ) -> Result<Vec<NStepSample>> {
        if self.slots.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty replay buffer".into()));
        }
        if n < 1 {
            return Err(Error::InvalidArgument("n-step horizon must be >= 1".into()));
        }
        let len = self.slots.len();
        Ok((0..batch)
            .map(|_| self.compose(self.base + rng.uniform_index(len) as u64, n, gamma))
            .collect())
    }

    /// Iterate stored transitions oldest-first (used by audits and tests).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }
}

/// Thread-safe handle: any number of writers plus a sampler, all
/// linearizable through one lock. Sampling sees a consistent snapshot.
#[derive(Debug, Clone)]
pub struct SharedReplay {
    inner: Arc<Mutex<ReplayBuffer>>,
}

impl SharedReplay {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(SharedReplay { inner: Arc::new(Mutex::new(ReplayBuffer::new(capacity)?)) })
    }

    pub fn push(&self, t: Transition) {
        self.inner.lock().expect("replay lock").push(t);
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("replay lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.inner.lock().expect("replay lock").clear();
    }

    pub fn sample_nstep(
        &self,
        batch: usize,
        n: u32,
        gamma: f64,
        rng: &mut DetRng,
    ) -> Result<Vec<NStepSample>> {
        self.inner.lock().expect("replay lock").sample_nstep(batch, n, gamma, rng)
    }

    /// Run `f` under the lock (audits, tests).
    pub fn with<R>(&self, f: impl FnOnce(&ReplayBuffer) -> R) -> R {
        f(&self.inner.lock().expect("replay lock"))
    }
}
