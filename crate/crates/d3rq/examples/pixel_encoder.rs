//! The pixel path: stacked-frame image observations through augmentation
//! and the conv encoder, with a finite-difference check on one critic
//! update worth of encoder gradients.
//!
//!     cargo run --release --example pixel_encoder

use d3rq::agent::{AgentConfig, AgentState, EncoderSpec, NoiseSchedule, UpdateRngs};
use d3rq::augment::ImageTensor;
use d3rq::config::Mode;
use d3rq::envsim::Observation;
use d3rq::netcore::{AdamConfig, ConvEncoderSpec, MlpSpec, OutputActivation};
use d3rq::replay::NStepSample;
use d3rq::rng::DetRng;
use d3rq::valuedist::Support;

fn random_image(rng: &mut DetRng, shape: [usize; 3]) -> ImageTensor {
    ImageTensor {
        channels: shape[0],
        height: shape[1],
        width: shape[2],
        data: (0..shape.iter().product()).map(|_| rng.uniform01()).collect(),
    }
}

fn main() -> d3rq::Result<()> {
    // a 9-channel stack (3 RGB frames) at a desk-friendly 21x21
    let in_shape = [9, 21, 21];
    let feat_dim = 50;
    let encoder = ConvEncoderSpec::default_pixel(in_shape, feat_dim);
    println!("encoder: {:?} -> {feat_dim} features", in_shape);
    for (i, layer) in encoder.layers.iter().enumerate() {
        println!(
            "  conv{i}: {} -> {} channels, {}x{} kernel, stride {}",
            layer.in_ch, layer.out_ch, layer.ksize, layer.ksize, layer.stride
        );
    }
    println!("  flattened conv output: {} values", encoder.flat_conv_len()?);

    let support = Support::shared(0.0, 100.0, 51)?;
    let cfg = AgentConfig {
        mode: Mode::Categorical,
        support,
        gamma: 0.99,
        n_step: 3,
        tau: 0.01,
        noise: NoiseSchedule::new(0.5, 0.5, 0, 1, 0.2)?,
        warmup_steps: 0,
        action_dim: 2,
        actor_spec: MlpSpec::new(vec![feat_dim, 32, 32, 2], OutputActivation::Tanh),
        critic_spec: MlpSpec::new(vec![feat_dim + 2, 32, 32, 51], OutputActivation::Linear),
        encoder_spec: EncoderSpec::Conv(encoder),
        adam: AdamConfig::default(),
        aug_pad: 4,
        threads: 1,
    };
    let mut agent = AgentState::new(cfg, 7)?;

    let mut rng = DetRng::new(1);
    let batch: Vec<NStepSample> = (0..8)
        .map(|_| NStepSample {
            obs: Observation::Image(random_image(&mut rng, in_shape)),
            action: vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
            reward_sum: rng.uniform(0.0, 3.0),
            horizon: 3,
            bootstrap_obs: Observation::Image(random_image(&mut rng, in_shape)),
            bootstrap_discount: 0.99f64.powi(3),
            bootstrap: true,
        })
        .collect();

    let mut rngs = UpdateRngs::from_seed(2);
    let (loss1, loss2) = agent.update_critic(&batch, &mut rngs)?;
    println!("\none augmented critic update on 8 pixel samples:");
    println!("  critic losses ({loss1:.4}, {loss2:.4})");
    println!("  encoder Adam steps: {}", agent.opt_encoder.step_count());

    // spot-check the encoder gradient against central differences
    let prepared = agent.prepare_critic_batch(&batch, &mut rngs)?;
    let grads = agent.critic_loss_grads(&prepared)?;
    let flat = agent.encoder.to_flat();
    let flat_grads = grads.grads_encoder.to_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..flat.len()).step_by(flat.len() / 24) {
        let mut probe = agent.clone();
        let mut fp = flat.clone();
        fp[i] += h;
        probe.encoder.assign_flat(&fp)?;
        let plus = probe.critic_loss_grads(&prepared)?;
        fp[i] -= 2.0 * h;
        probe.encoder.assign_flat(&fp)?;
        let minus = probe.critic_loss_grads(&prepared)?;
        let fd = ((plus.loss1 + plus.loss2) - (minus.loss1 + minus.loss2)) / (2.0 * h);
        let analytic = flat_grads[i];
        let denom = fd.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max((fd - analytic).abs() / denom);
    }
    println!("  encoder gradient vs finite differences: worst relative error {worst:.3e}");
    assert!(worst < 1e-4);
    Ok(())
}
