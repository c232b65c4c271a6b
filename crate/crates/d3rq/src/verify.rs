//! Named invariant suites behind the `verify` command.
//!
//! Each suite pits an implementation path against an independent route to
//! the same numbers: brute-force mass splitting for the projection, central
//! finite differences for every gradient, a window-walk re-derivation for
//! replay samples, the exact tabular operators for the agent's target path,
//! and round-trip identity for the wire protocol. Checks report the
//! tolerance they enforce and the worst error they observed.

use crate::agent::{AgentConfig, AgentState, EncoderSpec, NoiseSchedule, UpdateRngs};
use crate::config::Mode;
use crate::distrib::{decode_frame, encode_frame, WireMessage, PROTOCOL_VERSION};
use crate::envsim::{chain6, Observation};
use crate::error::{Error, Result};
use crate::netcore::{
    backward, conv_forward, init_orthogonal, mlp_forward, AdamConfig, ConvLayerSpec, MlpSpec,
    OutputActivation, ParamSet, Tensor,
};
use crate::oracle::{
    bellman_residual, brute_force_returns, dist_eval, enumerate_nstep_leaves, exact_q,
    nstep_dist_operator, one_step_operator, ReturnDistTable, TabularPolicy,
};
use crate::replay::{NStepSample, ReplayBuffer, Transition};
use crate::rng::DetRng;
use crate::valuedist::{
    cross_entropy_loss, expectation, normalize, project, shift_scale_targets, CategoricalDist,
    Logits, Support,
};
use std::sync::Arc;
use std::time::Instant;

pub const SUITES: [&str; 5] = ["projection", "gradients", "replay", "oracle", "protocol"];

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub observed: f64,
    pub pass: bool,
}

impl Check {
    fn bounded(name: &str, observed: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            tolerance,
            observed,
            pass: observed.is_finite() && observed <= tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Run one named suite, or every suite for `"all"`.
pub fn run_suites(name: &str) -> Result<Vec<SuiteReport>> {
    match name {
        "projection" => Ok(vec![projection_suite()?]),
        "gradients" => Ok(vec![gradients_suite()?]),
        "replay" => Ok(vec![replay_suite()?]),
        "oracle" => Ok(vec![oracle_suite()?]),
        "protocol" => Ok(vec![protocol_suite()?]),
        "all" => Ok(vec![
            projection_suite()?,
            gradients_suite()?,
            replay_suite()?,
            oracle_suite()?,
            protocol_suite()?,
        ]),
        other => Err(Error::InvalidArgument(format!(
            "unknown suite {other:?}; expected one of {SUITES:?} or \"all\""
        ))),
    }
}

fn random_simplex(rng: &mut DetRng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0).max(1e-12)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

// ---------------------------------------------------------------------------
// projection

/// Independent mass-splitting projection: per target value, deposit its mass
/// on the two bracketing atoms in inverse proportion to distance.
pub fn projection_oracle(support: &Support, values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; support.n_atoms];
    for (&value, &mass) in values.iter().zip(probs) {
        let clamped = value.clamp(support.v_min, support.v_max);
        let pos = (clamped - support.v_min) / support.delta;
        let lo = (pos.floor() as usize).min(support.n_atoms - 1);
        let hi = (pos.ceil() as usize).min(support.n_atoms - 1);
        if lo == hi {
            out[lo] += mass;
        } else {
            let frac = pos - lo as f64;
            out[lo] += mass * (1.0 - frac);
            out[hi] += mass * frac;
        }
    }
    out
}

pub fn projection_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = DetRng::new(0xD15C);
    let mut checks = Vec::new();

    // 1000 randomized cases against the independent oracle
    let mut worst_atom_diff: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for _ in 0..1000 {
        let n_atoms = 2 + rng.uniform_index(30);
        let v_min = rng.uniform(-5.0, 0.0);
        let v_max = v_min + rng.uniform(0.5, 10.0);
        let support = Support::shared(v_min, v_max, n_atoms)?;
        let k = 1 + rng.uniform_index(24);
        let probs = random_simplex(&mut rng, k);
        let values: Vec<f64> = (0..k).map(|_| rng.uniform(v_min, v_max)).collect();
        let got = project(&support, &values, &probs)?;
        let want = projection_oracle(&support, &values, &probs);
        for (g, w) in got.probs.iter().zip(&want) {
            worst_atom_diff = worst_atom_diff.max((g - w).abs());
        }
        let mass: f64 = got.probs.iter().sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
        let mean_in: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        worst_mean = worst_mean.max((expectation(&got) - mean_in).abs());
    }
    checks.push(Check::bounded(
        "projection vs brute-force oracle (1000 cases, per atom)",
        worst_atom_diff,
        1e-12,
    ));
    checks.push(Check::bounded("projection mass conservation", worst_mass, 1e-9));
    checks.push(Check::bounded("projection mean preservation", worst_mean, 1e-9));

    // identity: shift-scale with g = 0, gamma^n = 1, then project
    let mut worst_identity: f64 = 0.0;
    for _ in 0..100 {
        let support = Support::shared(-3.0, 7.0, 2 + rng.uniform_index(40))?;
        let probs = random_simplex(&mut rng, support.n_atoms);
        let values = shift_scale_targets(&support, 0.0, 1.0, true);
        let out = project(&support, &values, &probs)?;
        for (g, w) in out.probs.iter().zip(&probs) {
            worst_identity = worst_identity.max((g - w).abs());
        }
    }
    checks.push(Check::bounded(
        "shift-scale(0, 1) + project identity (100 cases)",
        worst_identity,
        1e-12,
    ));

    // softmax normalization under extreme logits
    let mut worst_norm: f64 = 0.0;
    let mut most_negative: f64 = 0.0;
    for _ in 0..200 {
        let n = 2 + rng.uniform_index(20);
        let support = Support::shared(0.0, 1.0, n)?;
        let omega: Vec<f64> = (0..n).map(|_| rng.uniform(-700.0, 700.0)).collect();
        let dist = normalize(&support, &Logits::new(omega))?;
        let total: f64 = dist.probs.iter().sum();
        worst_norm = worst_norm.max((total - 1.0).abs());
        for &p in &dist.probs {
            most_negative = most_negative.max(-p);
        }
    }
    checks.push(Check::bounded("softmax normalization (|sum - 1|)", worst_norm, 1e-9));
    checks.push(Check::bounded("softmax negative mass", most_negative, 0.0));

    Ok(SuiteReport { suite: "projection".into(), checks, seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// gradients

fn relative_error(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs()).max(1e-6);
    (analytic - fd).abs() / denom
}

fn vector_agent(mode: Mode, rng: &mut DetRng) -> Result<AgentState> {
    let support = Support::shared(0.0, 10.0, 11)?;
    let critic_out = match mode {
        Mode::Categorical => 11,
        Mode::Scalar => 1,
    };
    let cfg = AgentConfig {
        mode,
        support,
        gamma: 0.95,
        n_step: 3,
        tau: 0.01,
        noise: NoiseSchedule::new(0.3, 0.3, 0, 1, 0.2)?,
        warmup_steps: 0,
        action_dim: 2,
        actor_spec: MlpSpec::new(vec![3, 8, 8, 2], OutputActivation::Tanh),
        critic_spec: MlpSpec::new(vec![5, 8, 8, critic_out], OutputActivation::Linear),
        encoder_spec: EncoderSpec::Identity { dim: 3 },
        adam: AdamConfig::default(),
        aug_pad: 4,
        threads: 1,
    };
    let mut agent = AgentState::new(cfg, rng.next_u64())?;
    // fresh nets have all-zero biases, which parks ReLU pre-activations of a
    // fully dead layer exactly on the kink; central differences straddle it
    // there even though the subgradient is well defined. Jitter the biases
    // so the finite-difference checks probe generic points.
    for params in [
        &mut agent.actor,
        &mut agent.critic1,
        &mut agent.critic2,
        &mut agent.target1,
        &mut agent.target2,
    ] {
        for layer in 0..8 {
            let name = format!("b{layer}");
            if !params.contains(&name) {
                break;
            }
            for v in params.get_mut(&name)?.data.iter_mut() {
                *v += rng.uniform(-0.2, 0.2);
            }
        }
    }
    Ok(agent)
}

fn random_batch(agent: &AgentState, rng: &mut DetRng, n: usize) -> Vec<NStepSample> {
    (0..n)
        .map(|_| NStepSample {
            obs: Observation::Vector((0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            action: (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            reward_sum: rng.uniform(0.0, 3.0),
            horizon: 3,
            bootstrap_obs: Observation::Vector((0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            bootstrap_discount: agent.cfg.gamma.powi(3),
            bootstrap: rng.uniform01() > 0.2,
        })
        .collect()
}

pub fn gradients_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = DetRng::new(0x96AD);
    let mut checks = Vec::new();
    let h = 1e-5;

    // cross-entropy + softmax
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.uniform_index(10);
        let support = Support::shared(0.0, 1.0, n)?;
        let target = CategoricalDist::new(support, random_simplex(&mut rng, n))?;
        let omega: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let (_, grad) = cross_entropy_loss(&target, &Logits::new(omega.clone()))?;
        for i in 0..n {
            let mut plus = omega.clone();
            plus[i] += h;
            let mut minus = omega.clone();
            minus[i] -= h;
            let (lp, _) = cross_entropy_loss(&target, &Logits::new(plus))?;
            let (lm, _) = cross_entropy_loss(&target, &Logits::new(minus))?;
            worst = worst.max(relative_error(grad[i], (lp - lm) / (2.0 * h)));
        }
    }
    checks.push(Check::bounded("cross-entropy softmax gradient (50 cases)", worst, 1e-4));

    // MLP forward/backward
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let spec = if case % 2 == 0 {
            MlpSpec::new(vec![4, 7, 3], OutputActivation::Linear)
        } else {
            MlpSpec::new(vec![3, 6, 6, 2], OutputActivation::Tanh)
        };
        let params = spec.init_params(&mut rng, None);
        let input: Vec<f64> = (0..spec.input_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let out_grad: Vec<f64> = (0..spec.output_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, tape) = mlp_forward(&spec, &params, &input)?;
        let (grads, _) = backward(&params, tape, &out_grad)?;
        let loss = |p: &ParamSet| -> Result<f64> {
            let (out, _) = mlp_forward(&spec, p, &input)?;
            Ok(out.iter().zip(&out_grad).map(|(o, g)| o * g).sum())
        };
        let flat = params.to_flat();
        let flat_grads = grads.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            let mut probe = params.clone();
            fp[i] += h;
            probe.assign_flat(&fp)?;
            let lp = loss(&probe)?;
            fp[i] -= 2.0 * h;
            probe.assign_flat(&fp)?;
            let lm = loss(&probe)?;
            worst = worst.max(relative_error(flat_grads[i], (lp - lm) / (2.0 * h)));
        }
    }
    checks.push(Check::bounded("mlp gradient (50 nets)", worst, 1e-4));

    // conv layer
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let layer = ConvLayerSpec { in_ch: 2, out_ch: 2, ksize: 3, stride: 2 };
        let mut params = ParamSet::new();
        let flat = init_orthogonal(2, 18, 1.0, &mut rng);
        params.insert("k", Tensor::from_vec(&[2, 2, 3, 3], flat.data)?)?;
        params.insert("b", Tensor::from_vec(&[2], vec![rng.normal(), rng.normal()])?)?;
        let image =
            Tensor::from_vec(&[2, 6, 6], (0..72).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
        let (out, tape) = conv_forward(&layer, &params, "k", "b", &image)?;
        let out_grad: Vec<f64> = (0..out.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (grads, _) = backward(&params, tape, &out_grad)?;
        let loss = |p: &ParamSet| -> Result<f64> {
            let (o, _) = conv_forward(&layer, p, "k", "b", &image)?;
            Ok(o.data.iter().zip(&out_grad).map(|(a, b)| a * b).sum())
        };
        let flat = params.to_flat();
        let flat_grads = grads.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            let mut probe = params.clone();
            fp[i] += h;
            probe.assign_flat(&fp)?;
            let lp = loss(&probe)?;
            fp[i] -= 2.0 * h;
            probe.assign_flat(&fp)?;
            let lm = loss(&probe)?;
            worst = worst.max(relative_error(flat_grads[i], (lp - lm) / (2.0 * h)));
        }
    }
    checks.push(Check::bounded("conv gradient (50 layers)", worst, 1e-4));

    // full critic loss, both modes alternating
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let mode = if case % 2 == 0 { Mode::Categorical } else { Mode::Scalar };
        let agent = vector_agent(mode, &mut rng)?;
        let batch = random_batch(&agent, &mut rng, 4);
        let mut rngs = UpdateRngs::from_seed(rng.next_u64());
        let prepared = agent.prepare_critic_batch(&batch, &mut rngs)?;
        let g = agent.critic_loss_grads(&prepared)?;
        for which in 0..2 {
            let (params, grads) = if which == 0 {
                (&agent.critic1, &g.grads1)
            } else {
                (&agent.critic2, &g.grads2)
            };
            let flat = params.to_flat();
            let flat_grads = grads.to_flat();
            // probe a spread of coordinates across every layer
            for i in (0..flat.len()).step_by(7) {
                let mut probe = agent.clone();
                let mut fp = flat.clone();
                fp[i] += h;
                if which == 0 {
                    probe.critic1.assign_flat(&fp)?;
                } else {
                    probe.critic2.assign_flat(&fp)?;
                }
                let gp = probe.critic_loss_grads(&prepared)?;
                fp[i] -= 2.0 * h;
                if which == 0 {
                    probe.critic1.assign_flat(&fp)?;
                } else {
                    probe.critic2.assign_flat(&fp)?;
                }
                let gm = probe.critic_loss_grads(&prepared)?;
                let (lp, lm) =
                    if which == 0 { (gp.loss1, gm.loss1) } else { (gp.loss2, gm.loss2) };
                worst = worst.max(relative_error(flat_grads[i], (lp - lm) / (2.0 * h)));
            }
        }
    }
    checks.push(Check::bounded("full critic loss gradient (50 agents)", worst, 1e-4));

    // full actor loss
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let mode = if case % 2 == 0 { Mode::Categorical } else { Mode::Scalar };
        let agent = vector_agent(mode, &mut rng)?;
        let obs: Vec<Observation> = (0..4)
            .map(|_| Observation::Vector((0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let mut rngs = UpdateRngs::from_seed(rng.next_u64());
        let prepared = agent.prepare_actor_batch(&obs, &mut rngs)?;
        let (_, grads) = agent.actor_loss_grads(&prepared)?;
        let flat = agent.actor.to_flat();
        let flat_grads = grads.to_flat();
        for i in (0..flat.len()).step_by(5) {
            let mut probe = agent.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            probe.actor.assign_flat(&fp)?;
            let (lp, _) = probe.actor_loss_grads(&prepared)?;
            fp[i] -= 2.0 * h;
            probe.actor.assign_flat(&fp)?;
            let (lm, _) = probe.actor_loss_grads(&prepared)?;
            worst = worst.max(relative_error(flat_grads[i], (lp - lm) / (2.0 * h)));
        }
    }
    checks.push(Check::bounded("full actor loss gradient (50 agents)", worst, 1e-4));

    Ok(SuiteReport { suite: "gradients".into(), checks, seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// replay

pub fn replay_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = DetRng::new(0x5E9A);
    let mut checks = Vec::new();

    // 10k random episodes, then sampled windows re-derived independently
    let mut buf = ReplayBuffer::new(200_000)?;
    let mut episodes: Vec<Vec<(f64, bool, bool)>> = Vec::new();
    for episode in 0..10_000u64 {
        let len = 1 + rng.uniform_index(6);
        let end = rng.uniform_index(3);
        let mut records = Vec::with_capacity(len);
        for i in 0..len {
            let last = i + 1 == len;
            let (terminal, truncated) = match (last, end) {
                (true, 0) => (true, false),
                (true, 1) => (false, true),
                _ => (false, false),
            };
            let reward = rng.uniform(-1.0, 1.0);
            records.push((reward, terminal, truncated));
            buf.push(Transition {
                obs: Observation::Vector(vec![episode as f64, i as f64]),
                action: vec![0.0],
                reward,
                next_obs: Observation::Vector(vec![episode as f64, (i + 1) as f64]),
                terminal,
                truncated,
                episode_id: episode,
                step_index: i as u32,
            });
        }
        episodes.push(records);
    }
    let gamma = 0.97;
    let mut mismatches = 0u64;
    for n in [1u32, 2, 3, 5] {
        for sample in buf.sample_nstep(5000, n, gamma, &mut rng)? {
            let v = sample.obs.as_vector().expect("vector obs");
            let (episode, step) = (v[0] as usize, v[1] as u32);
            let records = &episodes[episode];
            let mut g = 0.0;
            let mut d = 1.0;
            let mut m = 0u32;
            let mut bootstrap = true;
            for i in step..(step + n).min(records.len() as u32) {
                let (r, terminal, truncated) = records[i as usize];
                g += d * r;
                d *= gamma;
                m += 1;
                if terminal {
                    bootstrap = false;
                    break;
                }
                if truncated {
                    break;
                }
            }
            if sample.reward_sum != g
                || sample.horizon != m
                || sample.bootstrap != bootstrap
                || sample.bootstrap_discount != gamma.powi(m as i32)
            {
                mismatches += 1;
            }
        }
    }
    checks.push(Check::bounded(
        "n-step window oracle mismatches (20k samples, exact)",
        mismatches as f64,
        0.0,
    ));

    // uniformity over a single 100-step episode
    let mut buf = ReplayBuffer::new(128)?;
    for i in 0..100u32 {
        buf.push(Transition {
            obs: Observation::Vector(vec![0.0, i as f64]),
            action: vec![0.0],
            reward: 1.0,
            next_obs: Observation::Vector(vec![0.0, (i + 1) as f64]),
            terminal: false,
            truncated: false,
            episode_id: 0,
            step_index: i,
        });
    }
    let total = 100_000;
    let mut counts = vec![0u32; 100];
    for sample in buf.sample_nstep(total, 3, gamma, &mut rng)? {
        counts[sample.obs.as_vector().unwrap()[1] as usize] += 1;
    }
    let p = 0.01;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    let worst_dev = counts
        .iter()
        .map(|&c| (c as f64 - total as f64 * p).abs() / sigma)
        .fold(0.0, f64::max);
    checks.push(Check::bounded("sampling uniformity (max deviation, sigmas)", worst_dev, 5.0));

    Ok(SuiteReport { suite: "replay".into(), checks, seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// oracle

/// Build an agent whose identity encoder reads chain one-hot states and
/// whose target critics reproduce a given return-distribution table along
/// the policy (the critics ignore the action input; the policy is
/// deterministic, so only (x, pi(x)) entries are ever queried).
pub fn tabular_mirror_agent(
    z: &ReturnDistTable,
    policy: &[usize],
    support: &Arc<Support>,
    gamma: f64,
    n_step: u32,
) -> Result<AgentState> {
    let n_states = policy.len();
    let n_atoms = support.n_atoms;
    let cfg = AgentConfig {
        mode: Mode::Categorical,
        support: support.clone(),
        gamma,
        n_step,
        tau: 0.01,
        noise: NoiseSchedule::new(0.0, 0.0, 0, 1, 0.2)?,
        warmup_steps: 0,
        action_dim: 1,
        actor_spec: MlpSpec::new(vec![n_states, 1], OutputActivation::Tanh),
        critic_spec: MlpSpec::new(vec![n_states + 1, n_atoms], OutputActivation::Linear),
        encoder_spec: EncoderSpec::Identity { dim: n_states },
        adam: AdamConfig::default(),
        aug_pad: 4,
        threads: 1,
    };
    let mut agent = AgentState::new(cfg, 0)?;
    let mut weights = Tensor::zeros(&[n_atoms, n_states + 1]);
    for (state, &action) in policy.iter().enumerate() {
        let probs = z.entry(state, action);
        for (atom, &p) in probs.iter().enumerate() {
            // logits = log probabilities reproduce the table exactly after
            // softmax (the floor only guards zero-mass atoms)
            weights.data[atom * (n_states + 1) + state] = p.max(1e-100).ln();
        }
    }
    for target in [&mut agent.target1, &mut agent.target2] {
        target.get_mut("w0")?.data.copy_from_slice(&weights.data);
        target.get_mut("b0")?.data.fill(0.0);
    }
    Ok(agent)
}

pub fn oracle_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mdp = chain6();
    let policy = TabularPolicy::Deterministic(vec![0; 6]);
    let gamma = mdp.gamma;

    // (a) exact solve has a vanishing Bellman residual
    let q = exact_q(&mdp, &policy, gamma)?;
    let residual = bellman_residual(&mdp, &policy, gamma, &q);
    checks.push(Check::bounded("exact Q Bellman residual", residual, 1e-10));

    // (b) distributional evaluation agrees in expectation
    let support = Support::shared(-1.0, 11.0, 121)?;
    let z = dist_eval(&mdp, &policy, &support, 2000)?;
    let mut worst: f64 = 0.0;
    for s in 0..6 {
        for a in 0..2 {
            worst = worst.max((z.expectation(s, a) - q[s * 2 + a]).abs());
        }
    }
    checks.push(Check::bounded(
        "dist_eval expectation vs exact Q",
        worst,
        2.0 * support.delta,
    ));

    // (c) brute-force horizon-10 mean within the discount tail bound
    let horizon = 10;
    let samples = brute_force_returns(&mdp, &policy, horizon, gamma)?;
    let bound = gamma.powi(horizon as i32) * mdp.max_reward() / (1.0 - gamma);
    let mut worst: f64 = 0.0;
    for s in 0..6 {
        for a in 0..2 {
            worst = worst.max((samples.mean(s, a) - q[s * 2 + a]).abs());
        }
    }
    checks.push(Check::bounded("brute-force return mean vs exact Q", worst, bound));

    // (d) the agent's critic-target path equals the exact n-step operator:
    // enumerate each (x, a)'s trajectories, feed them to critic_targets as
    // n-step samples, mix by trajectory probability, compare per atom
    let n = 3;
    let oracle_out = nstep_dist_operator(&mdp, &policy, &z, n)?;
    let policy_actions = vec![0usize; 6];
    let agent = tabular_mirror_agent(&z, &policy_actions, &support, gamma, n)?;
    let one_hot = |s: usize| {
        let mut v = vec![0.0; 6];
        v[s] = 1.0;
        Observation::Vector(v)
    };
    let mut worst: f64 = 0.0;
    for s in 0..6 {
        for a in 0..2 {
            let leaves = enumerate_nstep_leaves(&mdp, &policy, s, a, n, gamma)?;
            let batch: Vec<NStepSample> = leaves
                .iter()
                .map(|leaf| NStepSample {
                    obs: one_hot(s),
                    action: vec![if a == 0 { -1.0 } else { 1.0 }],
                    reward_sum: leaf.reward_sum,
                    horizon: n,
                    bootstrap_obs: one_hot(leaf.state),
                    bootstrap_discount: gamma.powi(n as i32),
                    bootstrap: true,
                })
                .collect();
            let mut rngs = UpdateRngs::from_seed(0);
            let targets = agent.critic_targets(&batch, &mut rngs)?;
            let mut mixed = vec![0.0; support.n_atoms];
            for (leaf, target) in leaves.iter().zip(&targets) {
                for (m, p) in mixed.iter_mut().zip(&target.probs) {
                    *m += leaf.prob * p;
                }
            }
            for (got, want) in mixed.iter().zip(oracle_out.entry(s, a)) {
                worst = worst.max((got - want).abs());
            }
        }
    }
    checks.push(Check::bounded("agent critic targets vs n-step operator", worst, 1e-6));

    // contraction of the projected operator in expectation distance
    let mut iterate = ReturnDistTable::uniform_point(support.clone(), &mdp);
    let mut last_err = f64::INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..30 {
        iterate = one_step_operator(&mdp, &policy, &iterate)?;
        let err = (0..6)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| (iterate.expectation(s, a) - z.expectation(s, a)).abs())
            .fold(0.0, f64::max);
        if last_err.is_finite() && last_err > 1e-11 {
            worst_ratio = worst_ratio.max(err / last_err);
        }
        last_err = err;
    }
    checks.push(Check::bounded(
        "projected operator contraction rate",
        worst_ratio,
        gamma + 1e-9,
    ));

    Ok(SuiteReport { suite: "oracle".into(), checks, seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// protocol

fn random_message(rng: &mut DetRng) -> WireMessage {
    match rng.uniform_index(5) {
        0 => {
            let vec_obs = rng.uniform01() < 0.7;
            let make_obs = |rng: &mut DetRng| {
                if vec_obs {
                    Observation::Vector((0..3).map(|_| rng.normal()).collect())
                } else {
                    Observation::Image(crate::augment::ImageTensor {
                        channels: 1,
                        height: 2,
                        width: 2,
                        data: (0..4).map(|_| rng.uniform01()).collect(),
                    })
                }
            };
            let obs = make_obs(rng);
            let next_obs = make_obs(rng);
            WireMessage::Transition(Transition {
                obs,
                action: (0..1 + rng.uniform_index(3)).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                reward: rng.normal(),
                next_obs,
                terminal: rng.uniform01() < 0.2,
                truncated: rng.uniform01() < 0.2,
                episode_id: rng.next_u64(),
                step_index: (rng.next_u64() & 0xfffff) as u32,
            })
        }
        1 => WireMessage::WeightsRequest,
        2 => {
            let k = 1 + rng.uniform_index(3);
            let tensors = (0..k)
                .map(|i| {
                    let rows = 1 + rng.uniform_index(4);
                    let cols = 1 + rng.uniform_index(4);
                    (
                        format!("actor/w{i}"),
                        Tensor::from_vec(
                            &[rows, cols],
                            (0..rows * cols).map(|_| rng.normal()).collect(),
                        )
                        .expect("sized"),
                    )
                })
                .collect();
            WireMessage::WeightsSnapshot { version: rng.next_u64(), step: rng.next_u64(), tensors }
        }
        3 => WireMessage::Hello {
            protocol: PROTOCOL_VERSION,
            worker_id: (rng.next_u64() & 0xffff) as u32,
        },
        _ => WireMessage::Shutdown,
    }
}

pub fn protocol_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = DetRng::new(0xF4A3);
    let mut checks = Vec::new();

    let mut failures = 0u64;
    for _ in 0..10_000 {
        let msg = random_message(&mut rng);
        let frame = encode_frame(&msg);
        match decode_frame(&frame) {
            Ok((decoded, used)) if decoded == msg && used == frame.len() => {}
            _ => failures += 1,
        }
    }
    checks.push(Check::bounded(
        "round-trip identity failures (10k messages)",
        failures as f64,
        0.0,
    ));

    let mut accepted_bad = 0u64;
    for _ in 0..1000 {
        let msg = random_message(&mut rng);
        let frame = encode_frame(&msg);
        // truncation strictly inside the frame must be rejected
        let cut = 1 + rng.uniform_index(frame.len() - 1);
        if decode_frame(&frame[..cut]).is_ok() {
            accepted_bad += 1;
        }
        // unknown type byte must be rejected
        let mut bad = frame.clone();
        bad[4] = 0xEE;
        if decode_frame(&bad).is_ok() {
            accepted_bad += 1;
        }
    }
    checks.push(Check::bounded("malformed frames accepted", accepted_bad as f64, 0.0));

    Ok(SuiteReport { suite: "protocol".into(), checks, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suites("smoke").is_err());
    }

    #[test]
    fn projection_suite_passes() {
        let report = projection_suite().unwrap();
        assert!(report.passed(), "{:?}", report.checks);
    }

    #[test]
    fn replay_suite_passes() {
        let report = replay_suite().unwrap();
        assert!(report.passed(), "{:?}", report.checks);
    }

    #[test]
    fn oracle_suite_passes() {
        let report = oracle_suite().unwrap();
        assert!(report.passed(), "{:?}", report.checks);
    }

    #[test]
    fn protocol_suite_passes() {
        let report = protocol_suite().unwrap();
        assert!(report.passed(), "{:?}", report.checks);
    }
}
