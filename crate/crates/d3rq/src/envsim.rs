//! Desk-scale environments and wrappers.
//!
//! Three tasks ship with the engine: a pendulum swing-up (the learning
//! benchmark), a 2-D point-mass reach task (fast smoke tests), and a 6-state
//! chain MDP whose transition table is shared with the exact oracles. All
//! per-step rewards lie in [0, 1], which is what the default value-support
//! bounds are derived from. Episodes end either with `terminal` (a real
//! absorbing event, no bootstrap) or `truncated` (time limit, bootstrapping
//! continues); the two are never set by the same event.

use crate::augment::ImageTensor;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Vector(Vec<f64>),
    Image(ImageTensor),
}

impl Observation {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Observation::Vector(v) => Some(v),
            Observation::Image(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSpec {
    Vector(usize),
    Image([usize; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Observation,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Env: Send {
    fn obs_spec(&self) -> ObsSpec;
    fn action_dim(&self) -> usize;
    /// Deterministic initial observation for the given seed.
    fn reset(&mut self, seed: u64) -> Observation;
    /// Advance one step. Actions outside the box are clamped (and counted).
    /// Stepping a finished episode without a reset is an error.
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

fn clamp_action(action: &[f64], dim: usize, clamp_count: &mut u64) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::Env(format!("action has {} dims, expected {dim}", action.len())));
    }
    let mut out = Vec::with_capacity(dim);
    let mut clamped = false;
    for &a in action {
        if !a.is_finite() {
            return Err(Error::Env("non-finite action".into()));
        }
        let c = a.clamp(-1.0, 1.0);
        clamped |= c != a;
        out.push(c);
    }
    if clamped {
        *clamp_count += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pendulum swing-up

/// Underactuated pendulum. State (theta, theta_dot) with theta = 0 upright;
/// gravity g/l = 10 pushes away from upright, torque tops out at 2, so the
/// agent must pump energy before it can balance. Semi-implicit Euler at
/// dt = 0.02, viscous damping 0.05, speed clamped to [-8, 8]. Observation
/// (cos theta, sin theta, theta_dot / 8); reward (1 + cos theta) / 2 peaks
/// at 1 when upright.
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    started: bool,
    pub clamped_actions: u64,
}

impl Pendulum {
    pub const DT: f64 = 0.02;
    pub const GRAVITY: f64 = 10.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const DAMPING: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;

    pub fn new() -> Self {
        Pendulum { theta: PI, theta_dot: 0.0, started: false, clamped_actions: 0 }
    }

    fn observe(&self) -> Observation {
        Observation::Vector(vec![
            self.theta.cos(),
            self.theta.sin(),
            self.theta_dot / Self::MAX_SPEED,
        ])
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Vector(3)
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = DetRng::stream(seed, "pendulum_reset", 0);
        // hanging straight down, a hair off the unstable equilibrium
        self.theta = PI + rng.uniform(-0.05, 0.05);
        self.theta_dot = 0.0;
        self.started = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if !self.started {
            return Err(Error::Env("pendulum stepped before reset".into()));
        }
        let a = clamp_action(action, 1, &mut self.clamped_actions)?;
        let torque = Self::MAX_TORQUE * a[0];
        let accel = Self::GRAVITY * self.theta.sin() + torque - Self::DAMPING * self.theta_dot;
        self.theta_dot = (self.theta_dot + Self::DT * accel).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += Self::DT * self.theta_dot;
        // keep theta in (-pi, pi] so long episodes lose no precision
        if self.theta > PI {
            self.theta -= 2.0 * PI;
        } else if self.theta <= -PI {
            self.theta += 2.0 * PI;
        }
        let reward = (1.0 + self.theta.cos()) / 2.0;
        Ok(EnvStep { obs: self.observe(), reward, terminal: false, truncated: false })
    }
}

// ---------------------------------------------------------------------------
// point mass

/// 2-D point mass pushed by force actions toward a fixed goal. Velocity
/// decays by 10% per step and integrates at dt = 0.1; positions clamp to
/// the unit box. Reward exp(-4 d^2) in (0, 1].
pub struct PointMass {
    pos: [f64; 2],
    vel: [f64; 2],
    started: bool,
    pub clamped_actions: u64,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const DAMPING: f64 = 0.1;
    pub const GOAL: [f64; 2] = [0.5, 0.5];

    pub fn new() -> Self {
        PointMass { pos: [-0.5, -0.5], vel: [0.0, 0.0], started: false, clamped_actions: 0 }
    }

    fn observe(&self) -> Observation {
        Observation::Vector(vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]])
    }

    fn reward(&self) -> f64 {
        let dx = self.pos[0] - Self::GOAL[0];
        let dy = self.pos[1] - Self::GOAL[1];
        (-4.0 * (dx * dx + dy * dy)).exp()
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMass {
    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Vector(4)
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = DetRng::stream(seed, "pointmass_reset", 0);
        self.pos = [-0.5 + rng.uniform(-0.05, 0.05), -0.5 + rng.uniform(-0.05, 0.05)];
        self.vel = [0.0, 0.0];
        self.started = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if !self.started {
            return Err(Error::Env("point mass stepped before reset".into()));
        }
        let a = clamp_action(action, 2, &mut self.clamped_actions)?;
        for i in 0..2 {
            self.vel[i] = (1.0 - Self::DAMPING) * self.vel[i] + Self::DT * a[i];
            self.pos[i] = (self.pos[i] + Self::DT * self.vel[i]).clamp(-1.0, 1.0);
        }
        Ok(EnvStep { obs: self.observe(), reward: self.reward(), terminal: false, truncated: false })
    }
}

// ---------------------------------------------------------------------------
// finite MDPs

/// Finite MDP with a row-stochastic transition tensor and a reward table.
/// This is both a runnable environment (via [`TabularEnv`]) and the object
/// the exact oracles operate on.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// P[s][a][s'] flattened as (s * n_actions + a) * n_states + s'.
    pub transition: Vec<f64>,
    /// R[s][a] flattened as s * n_actions + a.
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if transition.len() != n_states * n_actions * n_states
            || rewards.len() != n_states * n_actions
        {
            return Err(Error::ShapeMismatch("transition/reward table sizes".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1)")));
        }
        let mdp = TabularMDP { n_states, n_actions, transition, rewards, gamma };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.row(s, a);
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "transition row ({s}, {a}) sums to {total}"
                    )));
                }
            }
        }
        Ok(mdp)
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The 6-state, 2-action chain used by the oracle suites. Action 0 walks
/// forward (deterministically out of state 0, with slip elsewhere) toward
/// the rewarding end state; action 1 walks back. gamma = 0.9.
pub fn chain6() -> TabularMDP {
    let n_states = 6;
    let n_actions = 2;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut rewards = vec![0.0; n_states * n_actions];
    let mut set = |s: usize, a: usize, sp: usize, p: f64| {
        transition[(s * n_actions + a) * n_states + sp] = p;
    };
    // forward
    set(0, 0, 1, 1.0);
    for s in 1..5 {
        set(s, 0, s + 1, 0.85);
        set(s, 0, s, 0.15);
    }
    set(5, 0, 5, 0.9);
    set(5, 0, 0, 0.1);
    // back
    set(0, 1, 0, 1.0);
    for s in 1..6 {
        set(s, 1, s - 1, 0.9);
        set(s, 1, s, 0.1);
    }
    let forward_rewards = [0.0, 0.05, 0.1, 0.15, 0.2, 1.0];
    for s in 0..6 {
        rewards[s * n_actions] = forward_rewards[s];
        rewards[s * n_actions + 1] = 0.01;
    }
    TabularMDP::new(n_states, n_actions, transition, rewards, 0.9).expect("chain6 table")
}

/// Runs a [`TabularMDP`] as an environment: one-hot observations and a
/// 1-D continuous action thresholded into the discrete action set
/// (negative half maps to action 0).
pub struct TabularEnv {
    pub mdp: TabularMDP,
    state: usize,
    rng: DetRng,
    started: bool,
    pub clamped_actions: u64,
}

impl TabularEnv {
    pub fn new(mdp: TabularMDP) -> Self {
        TabularEnv { mdp, state: 0, rng: DetRng::new(0), started: false, clamped_actions: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Observation {
        let mut v = vec![0.0; self.mdp.n_states];
        v[self.state] = 1.0;
        Observation::Vector(v)
    }

    fn decode_action(&self, a: f64) -> usize {
        if self.mdp.n_actions == 1 {
            return 0;
        }
        // split [-1, 1] into n_actions equal bins
        let t = (a + 1.0) / 2.0;
        ((t * self.mdp.n_actions as f64) as usize).min(self.mdp.n_actions - 1)
    }
}

impl Env for TabularEnv {
    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Vector(self.mdp.n_states)
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.state = 0;
        self.rng = DetRng::stream(seed, "tabular_env", 0);
        self.started = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if !self.started {
            return Err(Error::Env("tabular env stepped before reset".into()));
        }
        let a = clamp_action(action, 1, &mut self.clamped_actions)?;
        let act = self.decode_action(a[0]);
        let reward = self.mdp.reward(self.state, act);
        let row = self.mdp.row(self.state, act);
        let draw = self.rng.uniform01();
        let mut acc = 0.0;
        let mut next = self.mdp.n_states - 1;
        for (sp, &p) in row.iter().enumerate() {
            acc += p;
            if draw < acc {
                next = sp;
                break;
            }
        }
        self.state = next;
        Ok(EnvStep { obs: self.observe(), reward, terminal: false, truncated: false })
    }
}

// ---------------------------------------------------------------------------
// wrappers

/// Applies each action `k` times, summing rewards; an episode-ending inner
/// step ends the repeat window early.
pub struct ActionRepeat {
    inner: Box<dyn Env>,
    k: usize,
}

impl ActionRepeat {
    pub fn new(inner: Box<dyn Env>, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("action repeat must be >= 1".into()));
        }
        Ok(ActionRepeat { inner, k })
    }
}

impl Env for ActionRepeat {
    fn obs_spec(&self) -> ObsSpec {
        self.inner.obs_spec()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let mut total = 0.0;
        let mut last = None;
        for _ in 0..self.k {
            let step = self.inner.step(action)?;
            total += step.reward;
            let done = step.done();
            last = Some(step);
            if done {
                break;
            }
        }
        let mut step = last.expect("k >= 1");
        step.reward = total;
        Ok(step)
    }
}

/// Truncates episodes after `max_steps` wrapped steps. A terminal arriving
/// exactly at the limit stays terminal; truncation is only set on its own.
pub struct TimeLimit {
    inner: Box<dyn Env>,
    max_steps: usize,
    count: usize,
}

impl TimeLimit {
    pub fn new(inner: Box<dyn Env>, max_steps: usize) -> Self {
        TimeLimit { inner, max_steps, count: 0 }
    }
}

impl Env for TimeLimit {
    fn obs_spec(&self) -> ObsSpec {
        self.inner.obs_spec()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.count = 0;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if self.count >= self.max_steps {
            return Err(Error::Env("episode exceeded its time limit without reset".into()));
        }
        let mut step = self.inner.step(action)?;
        self.count += 1;
        if self.count >= self.max_steps && !step.terminal {
            step.truncated = true;
        }
        Ok(step)
    }
}

/// Concatenates the `k` most recent frames along channels; reset replicates
/// the first frame. Pixel observations only.
pub struct FrameStack {
    inner: Box<dyn Env>,
    k: usize,
    frames: std::collections::VecDeque<ImageTensor>,
}

impl FrameStack {
    pub fn new(inner: Box<dyn Env>, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("frame stack must be >= 1".into()));
        }
        match inner.obs_spec() {
            ObsSpec::Image(_) => {}
            ObsSpec::Vector(_) => {
                return Err(Error::InvalidArgument(
                    "frame stacking requires pixel observations".into(),
                ))
            }
        }
        Ok(FrameStack { inner, k, frames: std::collections::VecDeque::new() })
    }

    fn stacked(&self) -> Observation {
        let first = self.frames.front().expect("frames populated");
        let mut data = Vec::with_capacity(self.k * first.data.len());
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        Observation::Image(ImageTensor {
            channels: first.channels * self.k,
            height: first.height,
            width: first.width,
            data,
        })
    }

    fn push(&mut self, obs: Observation) {
        let img = match obs {
            Observation::Image(img) => img,
            Observation::Vector(_) => unreachable!("checked at construction"),
        };
        if self.frames.len() == self.k {
            self.frames.pop_front();
        }
        self.frames.push_back(img);
    }
}

impl Env for FrameStack {
    fn obs_spec(&self) -> ObsSpec {
        match self.inner.obs_spec() {
            ObsSpec::Image([c, h, w]) => ObsSpec::Image([c * self.k, h, w]),
            ObsSpec::Vector(_) => unreachable!("checked at construction"),
        }
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let first = self.inner.reset(seed);
        self.frames.clear();
        for _ in 0..self.k {
            self.push(first.clone());
        }
        self.stacked()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let mut step = self.inner.step(action)?;
        self.push(step.obs);
        step.obs = self.stacked();
        Ok(step)
    }
}

// ---------------------------------------------------------------------------
// task registry

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskInfo {
    pub obs_spec: ObsSpec,
    pub action_dim: usize,
    pub max_reward: f64,
    /// Episode length in wrapped (post-action-repeat) steps.
    pub episode_limit: usize,
}

pub const TASK_NAMES: [&str; 3] = ["pendulum", "pointmass", "chain6"];

pub fn task_info(name: &str) -> Result<TaskInfo> {
    match name {
        "pendulum" => Ok(TaskInfo {
            obs_spec: ObsSpec::Vector(3),
            action_dim: 1,
            max_reward: 1.0,
            episode_limit: 500,
        }),
        "pointmass" => Ok(TaskInfo {
            obs_spec: ObsSpec::Vector(4),
            action_dim: 2,
            max_reward: 1.0,
            episode_limit: 300,
        }),
        "chain6" => Ok(TaskInfo {
            obs_spec: ObsSpec::Vector(6),
            action_dim: 1,
            max_reward: 1.0,
            episode_limit: 200,
        }),
        other => Err(Error::Config(format!(
            "unknown task {other:?}; expected one of {TASK_NAMES:?}"
        ))),
    }
}

fn base_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "pointmass" => Ok(Box::new(PointMass::new())),
        "chain6" => Ok(Box::new(TabularEnv::new(chain6()))),
        other => Err(Error::Config(format!(
            "unknown task {other:?}; expected one of {TASK_NAMES:?}"
        ))),
    }
}

/// Task by name with its canonical wrappers: action repeat then the task's
/// episode time limit (counted in wrapped steps). The per-step reward bound
/// therefore becomes `action_repeat * max_reward`.
pub fn make_task(name: &str, action_repeat: usize) -> Result<Box<dyn Env>> {
    let info = task_info(name)?;
    let env = base_env(name)?;
    let env = Box::new(ActionRepeat::new(env, action_repeat)?);
    Ok(Box::new(TimeLimit::new(env, info.episode_limit)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resets_are_seed_deterministic() {
        let mut env = Pendulum::new();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        let c = env.reset(8);
        assert_ne!(a, c);

        let mut tab = TabularEnv::new(chain6());
        let obs = tab.reset(3);
        assert_eq!(obs.as_vector().unwrap()[0], 1.0);
    }

    #[test]
    fn pendulum_reset_is_near_down_with_zero_velocity() {
        let mut env = Pendulum::new();
        let obs = env.reset(123);
        let v = obs.as_vector().unwrap();
        // down means cos(theta) near -1
        assert!(v[0] < -0.99, "cos theta {}", v[0]);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn pendulum_upright_fixed_point_has_reward_one() {
        let mut env = Pendulum::new();
        env.reset(0);
        env.theta = 0.0;
        env.theta_dot = 0.0;
        let step = env.step(&[0.0]).unwrap();
        assert!((step.reward - 1.0).abs() < 1e-12);
        let v = step.obs.as_vector().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_rewards_bounded() {
        let mut env = Pendulum::new();
        env.reset(5);
        let mut rng = DetRng::new(1);
        for _ in 0..1000 {
            let step = env.step(&[rng.uniform(-1.0, 1.0)]).unwrap();
            assert!((0.0..=1.0).contains(&step.reward));
            assert!(env.theta_dot.abs() <= Pendulum::MAX_SPEED);
        }
    }

    #[test]
    fn pointmass_zero_action_from_rest_keeps_position() {
        let mut env = PointMass::new();
        let before = env.reset(9).as_vector().unwrap().to_vec();
        let step = env.step(&[0.0, 0.0]).unwrap();
        let after = step.obs.as_vector().unwrap();
        assert_eq!(&before[0..2], &after[0..2]);
        assert!((0.0..=1.0).contains(&step.reward));
    }

    #[test]
    fn chain_action0_in_state0_reaches_state1() {
        let mut env = TabularEnv::new(chain6());
        env.reset(0);
        let step = env.step(&[-1.0]).unwrap();
        let v = step.obs.as_vector().unwrap();
        assert_eq!(v[1], 1.0);
        assert_eq!(step.reward, 0.0);
    }

    #[test]
    fn chain_rows_are_stochastic() {
        let mdp = chain6();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let total: f64 = mdp.row(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(mdp.max_reward(), 1.0);
    }

    #[test]
    fn step_before_reset_errors() {
        let mut env = Pendulum::new();
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn determinism_bitwise_over_trajectories() {
        let run = |seed: u64| -> Vec<f64> {
            let mut env = make_task("pendulum", 2).unwrap();
            let mut rng = DetRng::new(99);
            let mut trace = Vec::new();
            if let Observation::Vector(v) = env.reset(seed) {
                trace.extend(v);
            }
            for _ in 0..50 {
                let step = env.step(&[rng.uniform(-1.0, 1.0)]).unwrap();
                trace.push(step.reward);
                if let Observation::Vector(v) = step.obs {
                    trace.extend(v);
                }
            }
            trace
        };
        let a = run(4);
        let b = run(4);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn action_repeat_sums_rewards() {
        struct Scripted {
            rewards: Vec<f64>,
            at: usize,
            terminal_at: Option<usize>,
        }
        impl Env for Scripted {
            fn obs_spec(&self) -> ObsSpec {
                ObsSpec::Vector(1)
            }
            fn action_dim(&self) -> usize {
                1
            }
            fn reset(&mut self, _seed: u64) -> Observation {
                self.at = 0;
                Observation::Vector(vec![0.0])
            }
            fn step(&mut self, _action: &[f64]) -> Result<EnvStep> {
                let reward = self.rewards[self.at];
                let terminal = self.terminal_at == Some(self.at);
                self.at += 1;
                Ok(EnvStep {
                    obs: Observation::Vector(vec![self.at as f64]),
                    reward,
                    terminal,
                    truncated: false,
                })
            }
        }

        let mut env = ActionRepeat::new(
            Box::new(Scripted { rewards: vec![0.3, 0.4], at: 0, terminal_at: None }),
            2,
        )
        .unwrap();
        env.reset(0);
        let step = env.step(&[0.0]).unwrap();
        assert!((step.reward - 0.7).abs() < 1e-15);

        // terminal inside the window stops early and keeps only that reward
        let mut env = ActionRepeat::new(
            Box::new(Scripted { rewards: vec![1.0, 2.0, 4.0], at: 0, terminal_at: Some(0) }),
            3,
        )
        .unwrap();
        env.reset(0);
        let step = env.step(&[0.0]).unwrap();
        assert_eq!(step.reward, 1.0);
        assert!(step.terminal);

        // k = 1 behaves like the raw env
        let mut env = ActionRepeat::new(
            Box::new(Scripted { rewards: vec![0.5, 0.25], at: 0, terminal_at: None }),
            1,
        )
        .unwrap();
        env.reset(0);
        assert_eq!(env.step(&[0.0]).unwrap().reward, 0.5);
    }

    #[test]
    fn time_limit_truncates_and_blocks_overruns() {
        let mut env = TimeLimit::new(Box::new(PointMass::new()), 3);
        env.reset(1);
        assert!(!env.step(&[0.1, 0.1]).unwrap().done());
        assert!(!env.step(&[0.1, 0.1]).unwrap().done());
        let last = env.step(&[0.1, 0.1]).unwrap();
        assert!(last.truncated);
        assert!(!last.terminal);
        assert!(env.step(&[0.1, 0.1]).is_err());
        env.reset(2);
        assert!(!env.step(&[0.0, 0.0]).unwrap().done());
    }

    #[test]
    fn frame_stack_replicates_reset_and_orders_frames() {
        struct Counter {
            at: u64,
        }
        impl Env for Counter {
            fn obs_spec(&self) -> ObsSpec {
                ObsSpec::Image([1, 2, 2])
            }
            fn action_dim(&self) -> usize {
                1
            }
            fn reset(&mut self, _seed: u64) -> Observation {
                self.at = 0;
                Observation::Image(ImageTensor::new(1, 2, 2, vec![0.0; 4]).unwrap())
            }
            fn step(&mut self, _action: &[f64]) -> Result<EnvStep> {
                self.at += 1;
                let v = self.at as f64 / 100.0;
                Ok(EnvStep {
                    obs: Observation::Image(ImageTensor::new(1, 2, 2, vec![v; 4]).unwrap()),
                    reward: 0.0,
                    terminal: false,
                    truncated: false,
                })
            }
        }

        let mut env = FrameStack::new(Box::new(Counter { at: 0 }), 3).unwrap();
        let obs = env.reset(0);
        match obs {
            Observation::Image(img) => {
                assert_eq!(img.channels, 3);
                assert!(img.data.iter().all(|&v| v == 0.0));
            }
            _ => panic!("expected image"),
        }
        env.step(&[0.0]).unwrap();
        let step = env.step(&[0.0]).unwrap();
        match step.obs {
            Observation::Image(img) => {
                // oldest to newest along channels: frames 0, 1, 2 of this episode
                assert_eq!(img.data[0], 0.0);
                assert_eq!(img.data[4], 0.01);
                assert_eq!(img.data[8], 0.02);
            }
            _ => panic!("expected image"),
        }

        // frame stacking refuses vector observations
        assert!(FrameStack::new(Box::new(PointMass::new()), 3).is_err());
    }

    #[test]
    fn task_registry_rejects_unknown_names() {
        assert!(make_task("walker", 2).is_err());
        assert!(task_info("pendulum").is_ok());
    }
}
