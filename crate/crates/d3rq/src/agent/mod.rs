//! The actor-critic agent.
//!
//! A deterministic actor plus twin critics over a shared (possibly identity)
//! encoder. In categorical mode each critic head emits logits over the value
//! support and targets are full projected distributions; in scalar mode the
//! heads emit a single expected return and targets are scalar Bellman
//! backups. Exploration adds scheduled clipped Gaussian noise; the first
//! `warmup_steps` env steps act uniformly at random.

pub(crate) mod train;
mod update;

pub use train::{eval_policy, train, Collector, EvalReport, LearnerCore, NullSink, TrainResult, TrainSink};
pub use update::{CriticGrads, PreparedActor, PreparedCritic, PreparedCriticEntry, TargetValue, UpdateRngs};

use crate::config::{Config, Mode};
use crate::envsim::{task_info, ObsSpec, Observation};
use crate::error::{Error, Result};
use crate::netcore::{
    init_conv_encoder, mlp_forward, read_checkpoint, write_checkpoint, AdamConfig, AdamState,
    ConvEncoderSpec, ConvLayerSpec, MlpSpec, OutputActivation, ParamSet, Tape, Tensor,
};
use crate::rng::DetRng;
use crate::valuedist::Support;
use std::path::Path;
use std::sync::Arc;

/// Linear exploration-noise schedule with an elementwise clip bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_init: f64,
    pub sigma_final: f64,
    pub start_step: u64,
    pub end_step: u64,
    pub clip: f64,
}

impl NoiseSchedule {
    pub fn new(sigma_init: f64, sigma_final: f64, start_step: u64, end_step: u64, clip: f64) -> Result<Self> {
        if sigma_final > sigma_init {
            return Err(Error::InvalidArgument(format!(
                "sigma_final {sigma_final} exceeds sigma_init {sigma_init}"
            )));
        }
        if end_step <= start_step {
            return Err(Error::InvalidArgument("end_step must exceed start_step".into()));
        }
        if clip <= 0.0 {
            return Err(Error::InvalidArgument("noise clip must be positive".into()));
        }
        Ok(NoiseSchedule { sigma_init, sigma_final, start_step, end_step, clip })
    }

    /// sigma_init before the ramp, sigma_final after it, linear in between.
    pub fn sigma_at(&self, t: u64) -> f64 {
        if t <= self.start_step {
            self.sigma_init
        } else if t >= self.end_step {
            self.sigma_final
        } else {
            let frac = (t - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
            self.sigma_init + frac * (self.sigma_final - self.sigma_init)
        }
    }

    /// Clipped Gaussian noise vector at step `t`; the update paths use this
    /// (target smoothing and the actor objective sample with the clip).
    pub fn sample(&self, t: u64, dim: usize, rng: &mut DetRng) -> Vec<f64> {
        let sigma = self.sigma_at(t);
        (0..dim)
            .map(|_| (sigma * rng.normal()).clamp(-self.clip, self.clip))
            .collect()
    }

    /// Unclipped Gaussian noise at step `t`; exploration while acting draws
    /// this (the clip only applies inside updates).
    pub fn sample_unclipped(&self, t: u64, dim: usize, rng: &mut DetRng) -> Vec<f64> {
        let sigma = self.sigma_at(t);
        (0..dim).map(|_| sigma * rng.normal()).collect()
    }
}

/// Observation-to-features map: identity for state vectors, a conv encoder
/// for pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    Identity { dim: usize },
    Conv(ConvEncoderSpec),
}

impl EncoderSpec {
    pub fn feat_dim(&self) -> usize {
        match self {
            EncoderSpec::Identity { dim } => *dim,
            EncoderSpec::Conv(spec) => spec.feat_dim,
        }
    }

    pub fn init(&self, rng: &mut DetRng) -> Result<ParamSet> {
        match self {
            EncoderSpec::Identity { .. } => Ok(ParamSet::new()),
            EncoderSpec::Conv(spec) => init_conv_encoder(spec, rng),
        }
    }

    /// Forward pass; returns the tape only for the conv path (the identity
    /// encoder has nothing to differentiate).
    pub fn forward(&self, params: &ParamSet, obs: &Observation) -> Result<(Vec<f64>, Option<Tape>)> {
        match (self, obs) {
            (EncoderSpec::Identity { dim }, Observation::Vector(v)) => {
                if v.len() != *dim {
                    return Err(Error::ShapeMismatch(format!(
                        "observation of {} for identity encoder of {dim}",
                        v.len()
                    )));
                }
                Ok((v.clone(), None))
            }
            (EncoderSpec::Conv(spec), Observation::Image(img)) => {
                let tensor = Tensor {
                    shape: vec![img.channels, img.height, img.width],
                    data: img.data.clone(),
                };
                let (feat, tape) = crate::netcore::encoder_forward(spec, params, &tensor)?;
                Ok((feat, Some(tape)))
            }
            (EncoderSpec::Identity { .. }, Observation::Image(_)) => {
                Err(Error::ShapeMismatch("identity encoder fed an image".into()))
            }
            (EncoderSpec::Conv(_), Observation::Vector(_)) => {
                Err(Error::ShapeMismatch("conv encoder fed a state vector".into()))
            }
        }
    }
}

/// Everything an actor needs to act: specs plus actor/encoder parameters.
/// [`AgentState`] lends one via [`AgentState::policy_ref`]; distributed
/// workers own a [`Policy`] refreshed from weight snapshots.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRef<'a> {
    pub actor_spec: &'a MlpSpec,
    pub encoder_spec: &'a EncoderSpec,
    pub actor: &'a ParamSet,
    pub encoder: &'a ParamSet,
    pub action_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub actor_spec: MlpSpec,
    pub encoder_spec: EncoderSpec,
    pub actor: ParamSet,
    pub encoder: ParamSet,
    pub action_dim: usize,
}

impl Policy {
    pub fn as_ref(&self) -> PolicyRef<'_> {
        PolicyRef {
            actor_spec: &self.actor_spec,
            encoder_spec: &self.encoder_spec,
            actor: &self.actor,
            encoder: &self.encoder,
            action_dim: self.action_dim,
        }
    }
}

/// Deterministic policy output for `obs`.
pub fn policy_action(policy: PolicyRef<'_>, obs: &Observation) -> Result<Vec<f64>> {
    let (feat, _) = policy.encoder_spec.forward(policy.encoder, obs)?;
    let (action, _) = mlp_forward(policy.actor_spec, policy.actor, &feat)?;
    Ok(action)
}

/// Action selection shared by the train loop and distributed actors:
/// uniform random during warmup, otherwise the deterministic policy plus
/// scheduled Gaussian noise (when exploring), clamped to the action box.
/// Acting noise is unclipped; the noise clip bound only applies to the
/// noise drawn inside updates.
pub fn act_core(
    policy: PolicyRef<'_>,
    obs: &Observation,
    t: u64,
    explore: bool,
    schedule: &NoiseSchedule,
    warmup_steps: u64,
    rng: &mut DetRng,
) -> Result<Vec<f64>> {
    if explore && t < warmup_steps {
        return Ok((0..policy.action_dim).map(|_| rng.uniform(-1.0, 1.0)).collect());
    }
    let mut action = policy_action(policy, obs)?;
    if explore {
        let noise = schedule.sample_unclipped(t, action.len(), rng);
        for (a, n) in action.iter_mut().zip(noise) {
            *a = (*a + n).clamp(-1.0, 1.0);
        }
    }
    Ok(action)
}

/// Fixed network/algorithm configuration of an agent.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub mode: Mode,
    pub support: Arc<Support>,
    pub gamma: f64,
    pub n_step: u32,
    pub tau: f64,
    pub noise: NoiseSchedule,
    pub warmup_steps: u64,
    pub action_dim: usize,
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub encoder_spec: EncoderSpec,
    pub adam: AdamConfig,
    pub aug_pad: usize,
    /// Fixed chunk count for batch-parallel updates; part of the numeric
    /// contract (changing it changes float summation order).
    pub threads: usize,
}

impl AgentConfig {
    /// Standard shapes: two ReLU hidden layers of `hidden_dim` for actor and
    /// critic, tanh actor head, critic head sized by mode.
    pub fn from_run_config(cfg: &Config) -> Result<Self> {
        let info = task_info(&cfg.task)?;
        let support = Support::shared(cfg.v_min, cfg.v_max, cfg.n_atoms)?;
        let encoder_spec = match info.obs_spec {
            ObsSpec::Vector(dim) => EncoderSpec::Identity { dim },
            ObsSpec::Image(shape) => {
                EncoderSpec::Conv(ConvEncoderSpec::default_pixel(shape, cfg.features_dim))
            }
        };
        let feat = encoder_spec.feat_dim();
        let critic_out = match cfg.mode {
            Mode::Categorical => cfg.n_atoms,
            Mode::Scalar => 1,
        };
        let noise = NoiseSchedule::new(
            cfg.noise_init,
            cfg.noise_final,
            0,
            cfg.noise_duration,
            cfg.noise_clip,
        )?;
        Ok(AgentConfig {
            mode: cfg.mode,
            support,
            gamma: cfg.gamma,
            n_step: cfg.n_step,
            tau: cfg.tau,
            noise,
            warmup_steps: cfg.warmup_steps,
            action_dim: info.action_dim,
            actor_spec: MlpSpec::new(
                vec![feat, cfg.hidden_dim, cfg.hidden_dim, info.action_dim],
                OutputActivation::Tanh,
            ),
            critic_spec: MlpSpec::new(
                vec![feat + info.action_dim, cfg.hidden_dim, cfg.hidden_dim, critic_out],
                OutputActivation::Linear,
            ),
            encoder_spec,
            adam: AdamConfig::with_lr(cfg.learning_rate),
            aug_pad: 4,
            threads: cfg.threads,
        })
    }

    fn validate(&self) -> Result<()> {
        let feat = self.encoder_spec.feat_dim();
        if self.actor_spec.input_dim() != feat {
            return Err(Error::ShapeMismatch("actor input vs encoder features".into()));
        }
        if self.actor_spec.output_dim() != self.action_dim {
            return Err(Error::ShapeMismatch("actor output vs action dim".into()));
        }
        if self.critic_spec.input_dim() != feat + self.action_dim {
            return Err(Error::ShapeMismatch("critic input vs features + action".into()));
        }
        let want_out = match self.mode {
            Mode::Categorical => self.support.n_atoms,
            Mode::Scalar => 1,
        };
        if self.critic_spec.output_dim() != want_out {
            return Err(Error::ShapeMismatch(format!(
                "critic head of {} outputs for mode {:?}",
                self.critic_spec.output_dim(),
                self.mode
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {}", self.gamma)));
        }
        if self.n_step < 1 {
            return Err(Error::InvalidArgument("n_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scale of the actor head's uniform init; keeps initial actions near zero.
const ACTOR_HEAD_INIT: f64 = 1e-2;

/// All mutable agent state: online and target parameters, optimizer moments,
/// and the env-step counter the noise schedule reads.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub cfg: AgentConfig,
    pub encoder: ParamSet,
    pub actor: ParamSet,
    pub critic1: ParamSet,
    pub critic2: ParamSet,
    pub target1: ParamSet,
    pub target2: ParamSet,
    pub opt_actor: AdamState,
    pub opt_critic1: AdamState,
    pub opt_critic2: AdamState,
    pub opt_encoder: AdamState,
    /// Env-step counter; drives sigma(t) inside updates.
    pub step: u64,
    /// Updates skipped because a loss or gradient went non-finite.
    pub skipped_updates: u64,
}

impl AgentState {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = DetRng::stream(seed, "init", 0);
        let encoder = cfg.encoder_spec.init(&mut rng)?;
        let actor = cfg.actor_spec.init_params(&mut rng, Some(ACTOR_HEAD_INIT));
        let critic1 = cfg.critic_spec.init_params(&mut rng, None);
        let critic2 = cfg.critic_spec.init_params(&mut rng, None);
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        let adam = cfg.adam;
        Ok(AgentState {
            opt_actor: AdamState::new(&actor, adam),
            opt_critic1: AdamState::new(&critic1, adam),
            opt_critic2: AdamState::new(&critic2, adam),
            opt_encoder: AdamState::new(&encoder, adam),
            cfg,
            encoder,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            step: 0,
            skipped_updates: 0,
        })
    }

    pub fn policy_ref(&self) -> PolicyRef<'_> {
        PolicyRef {
            actor_spec: &self.cfg.actor_spec,
            encoder_spec: &self.cfg.encoder_spec,
            actor: &self.actor,
            encoder: &self.encoder,
            action_dim: self.cfg.action_dim,
        }
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actor_spec: self.cfg.actor_spec.clone(),
            encoder_spec: self.cfg.encoder_spec.clone(),
            actor: self.actor.clone(),
            encoder: self.encoder.clone(),
            action_dim: self.cfg.action_dim,
        }
    }

    /// Act at env step `t`; see [`act_core`].
    pub fn act(&self, obs: &Observation, t: u64, explore: bool, rng: &mut DetRng) -> Result<Vec<f64>> {
        act_core(self.policy_ref(), obs, t, explore, &self.cfg.noise, self.cfg.warmup_steps, rng)
    }

    pub fn sigma_at(&self, t: u64) -> f64 {
        self.cfg.noise.sigma_at(t)
    }

    // -- checkpointing ------------------------------------------------------

    fn meta_params(&self) -> ParamSet {
        let mut meta = ParamSet::new();
        let scalar = |v: f64| Tensor { shape: vec![1], data: vec![v] };
        let vector = |v: Vec<f64>| Tensor { shape: vec![v.len()], data: v };
        let mode_flag = match self.cfg.mode {
            Mode::Categorical => 1.0,
            Mode::Scalar => 0.0,
        };
        meta.insert("mode", scalar(mode_flag)).expect("fresh");
        meta.insert(
            "support",
            vector(vec![
                self.cfg.support.v_min,
                self.cfg.support.v_max,
                self.cfg.support.n_atoms as f64,
            ]),
        )
        .expect("fresh");
        meta.insert("gamma", scalar(self.cfg.gamma)).expect("fresh");
        meta.insert("n_step", scalar(self.cfg.n_step as f64)).expect("fresh");
        meta.insert("tau", scalar(self.cfg.tau)).expect("fresh");
        meta.insert(
            "noise",
            vector(vec![
                self.cfg.noise.sigma_init,
                self.cfg.noise.sigma_final,
                self.cfg.noise.start_step as f64,
                self.cfg.noise.end_step as f64,
                self.cfg.noise.clip,
            ]),
        )
        .expect("fresh");
        meta.insert("warmup_steps", scalar(self.cfg.warmup_steps as f64)).expect("fresh");
        meta.insert("action_dim", scalar(self.cfg.action_dim as f64)).expect("fresh");
        meta.insert("aug_pad", scalar(self.cfg.aug_pad as f64)).expect("fresh");
        meta.insert("threads", scalar(self.cfg.threads as f64)).expect("fresh");
        meta.insert(
            "adam",
            vector(vec![self.cfg.adam.alpha, self.cfg.adam.beta1, self.cfg.adam.beta2, self.cfg.adam.eps]),
        )
        .expect("fresh");
        meta.insert(
            "actor_sizes",
            vector(self.cfg.actor_spec.sizes.iter().map(|&s| s as f64).collect()),
        )
        .expect("fresh");
        meta.insert(
            "critic_sizes",
            vector(self.cfg.critic_spec.sizes.iter().map(|&s| s as f64).collect()),
        )
        .expect("fresh");
        let encoder_desc = match &self.cfg.encoder_spec {
            EncoderSpec::Identity { dim } => vec![0.0, *dim as f64],
            EncoderSpec::Conv(spec) => {
                let mut v = vec![
                    1.0,
                    spec.in_shape[0] as f64,
                    spec.in_shape[1] as f64,
                    spec.in_shape[2] as f64,
                    spec.feat_dim as f64,
                    spec.layers.len() as f64,
                ];
                for layer in &spec.layers {
                    v.extend([
                        layer.in_ch as f64,
                        layer.out_ch as f64,
                        layer.ksize as f64,
                        layer.stride as f64,
                    ]);
                }
                v
            }
        };
        meta.insert("encoder", vector(encoder_desc)).expect("fresh");
        meta.insert("step", scalar(self.step as f64)).expect("fresh");
        meta.insert("skipped_updates", scalar(self.skipped_updates as f64)).expect("fresh");
        meta.insert(
            "opt_steps",
            vector(vec![
                self.opt_actor.step_count() as f64,
                self.opt_critic1.step_count() as f64,
                self.opt_critic2.step_count() as f64,
                self.opt_encoder.step_count() as f64,
            ]),
        )
        .expect("fresh");
        meta
    }

    /// Write the full agent (parameters, targets, optimizer moments, and the
    /// config metadata needed to rebuild it) in checkpoint format.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = self.meta_params();
        let (m_a, v_a) = self.opt_actor.moments();
        let (m_1, v_1) = self.opt_critic1.moments();
        let (m_2, v_2) = self.opt_critic2.moments();
        let (m_e, v_e) = self.opt_encoder.moments();
        write_checkpoint(
            path,
            &[
                ("meta", &meta),
                ("actor", &self.actor),
                ("critic1", &self.critic1),
                ("critic2", &self.critic2),
                ("target1", &self.target1),
                ("target2", &self.target2),
                ("encoder", &self.encoder),
                ("adam_actor_m", m_a),
                ("adam_actor_v", v_a),
                ("adam_critic1_m", m_1),
                ("adam_critic1_v", v_1),
                ("adam_critic2_m", m_2),
                ("adam_critic2_v", v_2),
                ("adam_encoder_m", m_e),
                ("adam_encoder_v", v_e),
            ],
        )
    }

    /// Rebuild an agent from [`save_checkpoint`] output.
    pub fn load_checkpoint(path: &Path) -> Result<AgentState> {
        let sections = read_checkpoint(path)?;
        let take = |name: &str| -> Result<ParamSet> {
            sections
                .iter()
                .find(|(s, _)| s == name)
                .map(|(_, p)| p.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))
        };
        // an identity encoder has no parameters, so its sections are absent
        let take_maybe_empty = |name: &str| -> ParamSet {
            sections
                .iter()
                .find(|(s, _)| s == name)
                .map(|(_, p)| p.clone())
                .unwrap_or_default()
        };
        let meta = take("meta")?;
        let scalar = |name: &str| -> Result<f64> {
            let t = meta
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing meta field {name}")))?;
            Ok(t.data[0])
        };
        let vector = |name: &str| -> Result<Vec<f64>> {
            let t = meta
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing meta field {name}")))?;
            Ok(t.data.clone())
        };

        let mode = if scalar("mode")? > 0.5 { Mode::Categorical } else { Mode::Scalar };
        let support_v = vector("support")?;
        let support = Support::shared(support_v[0], support_v[1], support_v[2] as usize)?;
        let noise_v = vector("noise")?;
        let noise = NoiseSchedule::new(
            noise_v[0],
            noise_v[1],
            noise_v[2] as u64,
            noise_v[3] as u64,
            noise_v[4],
        )?;
        let adam_v = vector("adam")?;
        let adam = AdamConfig { alpha: adam_v[0], beta1: adam_v[1], beta2: adam_v[2], eps: adam_v[3] };
        let encoder_desc = vector("encoder")?;
        let encoder_spec = if encoder_desc[0] < 0.5 {
            EncoderSpec::Identity { dim: encoder_desc[1] as usize }
        } else {
            let n_layers = encoder_desc[5] as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for i in 0..n_layers {
                let base = 6 + i * 4;
                layers.push(ConvLayerSpec {
                    in_ch: encoder_desc[base] as usize,
                    out_ch: encoder_desc[base + 1] as usize,
                    ksize: encoder_desc[base + 2] as usize,
                    stride: encoder_desc[base + 3] as usize,
                });
            }
            EncoderSpec::Conv(ConvEncoderSpec {
                in_shape: [
                    encoder_desc[1] as usize,
                    encoder_desc[2] as usize,
                    encoder_desc[3] as usize,
                ],
                layers,
                feat_dim: encoder_desc[4] as usize,
            })
        };
        let cfg = AgentConfig {
            mode,
            support,
            gamma: scalar("gamma")?,
            n_step: scalar("n_step")? as u32,
            tau: scalar("tau")?,
            noise,
            warmup_steps: scalar("warmup_steps")? as u64,
            action_dim: scalar("action_dim")? as usize,
            actor_spec: MlpSpec::new(
                vector("actor_sizes")?.iter().map(|&s| s as usize).collect(),
                OutputActivation::Tanh,
            ),
            critic_spec: MlpSpec::new(
                vector("critic_sizes")?.iter().map(|&s| s as usize).collect(),
                OutputActivation::Linear,
            ),
            encoder_spec,
            adam,
            aug_pad: scalar("aug_pad")? as usize,
            threads: scalar("threads")? as usize,
        };
        cfg.validate()?;

        let actor = take("actor")?;
        let critic1 = take("critic1")?;
        let critic2 = take("critic2")?;
        let target1 = take("target1")?;
        let target2 = take("target2")?;
        let encoder = take_maybe_empty("encoder");
        let opt_steps = vector("opt_steps")?;
        let mut opt_actor = AdamState::new(&actor, adam);
        opt_actor.restore_moments(take("adam_actor_m")?, take("adam_actor_v")?, opt_steps[0] as u64)?;
        let mut opt_critic1 = AdamState::new(&critic1, adam);
        opt_critic1.restore_moments(take("adam_critic1_m")?, take("adam_critic1_v")?, opt_steps[1] as u64)?;
        let mut opt_critic2 = AdamState::new(&critic2, adam);
        opt_critic2.restore_moments(take("adam_critic2_m")?, take("adam_critic2_v")?, opt_steps[2] as u64)?;
        let mut opt_encoder = AdamState::new(&encoder, adam);
        opt_encoder.restore_moments(
            take_maybe_empty("adam_encoder_m"),
            take_maybe_empty("adam_encoder_v"),
            opt_steps[3] as u64,
        )?;

        Ok(AgentState {
            cfg,
            encoder,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            opt_actor,
            opt_critic1,
            opt_critic2,
            opt_encoder,
            step: scalar("step")? as u64,
            skipped_updates: scalar("skipped_updates")? as u64,
        })
    }
}
