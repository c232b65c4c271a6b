//! Single-process training: one collector, one learner, shared replay.
//!
//! The distributed runtime reuses the same [`Collector`] and [`LearnerCore`]
//! with a wire protocol in between; in lockstep mode the two paths produce
//! byte-identical metrics, which the equivalence suite checks.

use super::{act_core, AgentConfig, AgentState, PolicyRef, UpdateRngs};
use crate::config::Config;
use crate::envsim::{make_task, Env, Observation};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::replay::{SharedReplay, Transition};
use crate::rng::DetRng;

/// Drives one environment with the exploration policy and produces the
/// transition stream. Worker-local randomness is derived from the master
/// seed and the worker id, so worker 0 in a distributed run reproduces the
/// single-process stream exactly.
pub struct Collector {
    env: Box<dyn Env>,
    explore_rng: DetRng,
    episode_seeds: DetRng,
    obs: Observation,
    episode_id: u64,
    episode_step: u32,
    episode_counter: u64,
    worker_id: u64,
    /// Env steps taken so far (drives the noise schedule).
    pub t: u64,
}

impl Collector {
    pub fn new(cfg: &Config, worker_id: u64, master_seed: u64) -> Result<Self> {
        let mut env = make_task(&cfg.task, cfg.action_repeat)?;
        let mut episode_seeds = DetRng::stream(master_seed, "episodes", worker_id);
        let obs = env.reset(episode_seeds.next_u64());
        Ok(Collector {
            env,
            explore_rng: DetRng::stream(master_seed, "explore", worker_id),
            episode_seeds,
            obs,
            episode_id: worker_id << 32,
            episode_step: 0,
            episode_counter: 0,
            worker_id,
            t: 0,
        })
    }

    /// One exploration step under `policy`; returns the stored transition.
    pub fn step_once(&mut self, policy: PolicyRef<'_>, agent_cfg: &AgentConfig) -> Result<Transition> {
        let action = act_core(
            policy,
            &self.obs,
            self.t,
            true,
            &agent_cfg.noise,
            agent_cfg.warmup_steps,
            &mut self.explore_rng,
        )?;
        let step = self.env.step(&action)?;
        let transition = Transition {
            obs: self.obs.clone(),
            action,
            reward: step.reward,
            next_obs: step.obs.clone(),
            terminal: step.terminal,
            truncated: step.truncated,
            episode_id: self.episode_id,
            step_index: self.episode_step,
        };
        self.t += 1;
        if step.terminal || step.truncated {
            self.episode_counter += 1;
            self.episode_id = (self.worker_id << 32) | self.episode_counter;
            self.episode_step = 0;
            self.obs = self.env.reset(self.episode_seeds.next_u64());
        } else {
            self.episode_step += 1;
            self.obs = step.obs;
        }
        Ok(transition)
    }
}

/// Owns the agent and its update-side randomness; one call per update.
pub struct LearnerCore {
    pub agent: AgentState,
    sample_rng: DetRng,
    rngs: UpdateRngs,
    batch_size: usize,
    actor_delay: u64,
    updates: u64,
}

impl LearnerCore {
    pub fn new(agent: AgentState, cfg: &Config, master_seed: u64) -> Self {
        LearnerCore {
            agent,
            sample_rng: DetRng::stream(master_seed, "replay_sample", 0),
            rngs: UpdateRngs {
                aug: DetRng::stream(master_seed, "augment", 0),
                noise: DetRng::stream(master_seed, "update_noise", 0),
            },
            batch_size: cfg.batch_size,
            actor_delay: cfg.actor_delay,
            updates: 0,
        }
    }

    pub fn updates_done(&self) -> u64 {
        self.updates
    }

    /// One critic update (and an actor update every `actor_delay`-th call).
    /// Non-finite losses are skipped and counted, per the learner contract.
    pub fn update_once(&mut self, replay: &SharedReplay) -> Result<(f64, f64, f64)> {
        let batch = replay.sample_nstep(
            self.batch_size,
            self.agent.cfg.n_step,
            self.agent.cfg.gamma,
            &mut self.sample_rng,
        )?;
        self.updates += 1;
        let (c1, c2) = match self.agent.update_critic(&batch, &mut self.rngs) {
            Ok(losses) => losses,
            Err(Error::NonFinite(_)) => {
                self.agent.skipped_updates += 1;
                (f64::NAN, f64::NAN)
            }
            Err(e) => return Err(e),
        };
        let actor_loss = if self.updates % self.actor_delay == 0 {
            let obs: Vec<Observation> = batch.iter().map(|s| s.obs.clone()).collect();
            match self.agent.update_actor(&obs, &mut self.rngs) {
                Ok(loss) => loss,
                Err(Error::NonFinite(_)) => {
                    self.agent.skipped_updates += 1;
                    f64::NAN
                }
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };
        Ok((c1, c2, actor_loss))
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

/// Evaluate the deterministic policy over fresh episodes. Episode seeds are
/// derived from (`master_seed`, `eval_index`), so every evaluation point is
/// reproducible independent of training state.
pub fn eval_policy(
    task: &str,
    action_repeat: usize,
    policy: PolicyRef<'_>,
    episodes: usize,
    master_seed: u64,
    eval_index: u64,
) -> Result<EvalReport> {
    let mut env = make_task(task, action_repeat)?;
    let mut seeds = DetRng::stream(master_seed, "eval", eval_index);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.next_u64());
        let mut total = 0.0;
        loop {
            let action = super::policy_action(policy, &obs)?;
            let step = env.step(&action)?;
            total += step.reward;
            if step.terminal || step.truncated {
                break;
            }
            obs = step.obs;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / episodes as f64;
    Ok(EvalReport { returns, mean, stddev: var.sqrt() })
}

/// Observer hooks for metric rows and periodic checkpoints.
pub trait TrainSink {
    fn on_row(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _agent: &AgentState, _step: u64) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl TrainSink for NullSink {}

pub struct TrainResult {
    pub metrics: Vec<MetricsRow>,
    pub agent: AgentState,
}

/// The training loop: interact, update every `update_freq` env steps once
/// the warmup has filled the replay, evaluate every `eval_interval` env
/// steps. Fully reproducible: same config and seed give byte-identical
/// metrics.
pub fn train(cfg: &Config, sink: &mut dyn TrainSink) -> Result<TrainResult> {
    let agent_cfg = AgentConfig::from_run_config(cfg)?;
    let agent = AgentState::new(agent_cfg, cfg.seed)?;
    let replay = SharedReplay::new(cfg.capacity)?;
    let mut collector = Collector::new(cfg, 0, cfg.seed)?;
    let mut learner = LearnerCore::new(agent, cfg, cfg.seed);
    let mut rows = Vec::new();
    let total_steps = cfg.total_env_steps();

    let mut acc = LossAccumulator::default();
    let mut eval_index = 0u64;
    for t in 1..=total_steps {
        let transition = collector.step_once(learner.agent.policy_ref(), &learner.agent.cfg)?;
        replay.push(transition);
        learner.agent.step = t;
        if t >= cfg.warmup_steps && t % cfg.update_freq == 0 {
            let losses = learner.update_once(&replay)?;
            acc.add(losses);
        }
        if t % cfg.eval_interval == 0 {
            eval_index += 1;
            let eval = eval_policy(
                &cfg.task,
                cfg.action_repeat,
                learner.agent.policy_ref(),
                cfg.eval_episodes,
                cfg.seed,
                eval_index,
            )?;
            let (c1, c2, al) = acc.take();
            let row = MetricsRow {
                step: t,
                eval_return: eval.mean,
                critic_loss_1: c1,
                critic_loss_2: c2,
                actor_loss: al,
                sigma: learner.agent.sigma_at(t),
                fps: 0.0,
            };
            sink.on_row(&row)?;
            rows.push(row);
        }
        if cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0 {
            sink.on_checkpoint(&learner.agent, t)?;
        }
    }
    Ok(TrainResult { metrics: rows, agent: learner.agent })
}

/// Means of the losses observed since the last metrics row.
#[derive(Default)]
pub(crate) struct LossAccumulator {
    c1: f64,
    c2: f64,
    actor: f64,
    n_critic: u64,
    n_actor: u64,
}

impl LossAccumulator {
    pub(crate) fn add(&mut self, (c1, c2, actor): (f64, f64, f64)) {
        if c1.is_finite() && c2.is_finite() {
            self.c1 += c1;
            self.c2 += c2;
            self.n_critic += 1;
        }
        if actor.is_finite() {
            self.actor += actor;
            self.n_actor += 1;
        }
    }

    pub(crate) fn take(&mut self) -> (f64, f64, f64) {
        let out = (
            if self.n_critic > 0 { self.c1 / self.n_critic as f64 } else { f64::NAN },
            if self.n_critic > 0 { self.c2 / self.n_critic as f64 } else { f64::NAN },
            if self.n_actor > 0 { self.actor / self.n_actor as f64 } else { f64::NAN },
        );
        *self = LossAccumulator::default();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;
    use crate::metrics::to_csv_string;

    fn tiny_config(total_frames: u64) -> Config {
        load_config(
            None,
            &[
                ("task".into(), "pointmass".into()),
                ("total_frames".into(), total_frames.to_string()),
                ("hidden_dim".into(), "12".into()),
                ("n_atoms".into(), "11".into()),
                ("batch_size".into(), "16".into()),
                ("warmup_steps".into(), "40".into()),
                ("noise_duration".into(), "200".into()),
                ("eval_interval".into(), "100".into()),
                ("eval_episodes".into(), "2".into()),
                ("capacity".into(), "10000".into()),
                ("checkpoint_interval".into(), "1000000".into()),
                ("seed".into(), "5".into()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_frames_runs_and_emits_nothing() {
        let cfg = tiny_config(0);
        let result = train(&cfg, &mut NullSink).unwrap();
        assert!(result.metrics.is_empty());
        assert_eq!(result.agent.step, 0);
    }

    #[test]
    fn same_seed_gives_byte_identical_metrics() {
        let cfg = tiny_config(600);
        let a = train(&cfg, &mut NullSink).unwrap();
        let b = train(&cfg, &mut NullSink).unwrap();
        assert_eq!(to_csv_string(&a.metrics), to_csv_string(&b.metrics));
        assert_eq!(a.agent.actor, b.agent.actor);

        let mut cfg2 = cfg.clone();
        cfg2.seed = 6;
        let c = train(&cfg2, &mut NullSink).unwrap();
        assert_ne!(to_csv_string(&a.metrics), to_csv_string(&c.metrics));
    }

    #[test]
    fn metrics_cadence_and_schema() {
        let cfg = tiny_config(600);
        let result = train(&cfg, &mut NullSink).unwrap();
        // 600 frames / repeat 2 = 300 env steps, eval every 100
        assert_eq!(result.metrics.len(), 3);
        assert_eq!(result.metrics[0].step, 100);
        assert_eq!(result.metrics[2].step, 300);
        for row in &result.metrics {
            assert!(row.eval_return.is_finite());
            assert!(row.sigma > 0.0);
            assert_eq!(row.fps, 0.0);
        }
        // updates ran after warmup, so later rows carry finite losses
        assert!(result.metrics[2].critic_loss_1.is_finite());
        assert!(result.metrics[2].actor_loss.is_finite());
    }

    #[test]
    fn eval_is_deterministic_per_index() {
        let cfg = tiny_config(0);
        let agent_cfg = AgentConfig::from_run_config(&cfg).unwrap();
        let agent = AgentState::new(agent_cfg, 1).unwrap();
        let a = eval_policy("pointmass", 2, agent.policy_ref(), 3, 9, 0).unwrap();
        let b = eval_policy("pointmass", 2, agent.policy_ref(), 3, 9, 0).unwrap();
        assert_eq!(a.returns, b.returns);
        let c = eval_policy("pointmass", 2, agent.policy_ref(), 3, 9, 1).unwrap();
        assert_ne!(a.returns, c.returns);
        // single episode has zero spread
        let single = eval_policy("pointmass", 2, agent.policy_ref(), 1, 9, 0).unwrap();
        assert_eq!(single.stddev, 0.0);
    }
}
