//! Replay storage and sample-time n-step composition: episode boundaries,
//! terminals vs truncation, and the accumulated discounted reward.
//!
//!     cargo run --example replay_nstep

use d3rq::envsim::Observation;
use d3rq::replay::{ReplayBuffer, Transition};
use d3rq::rng::DetRng;

fn push_episode(buf: &mut ReplayBuffer, episode: u64, rewards: &[f64], terminal_end: bool) {
    for (i, &reward) in rewards.iter().enumerate() {
        let last = i + 1 == rewards.len();
        buf.push(Transition {
            obs: Observation::Vector(vec![episode as f64, i as f64]),
            action: vec![0.0],
            reward,
            next_obs: Observation::Vector(vec![episode as f64, (i + 1) as f64]),
            terminal: last && terminal_end,
            truncated: last && !terminal_end,
            episode_id: episode,
            step_index: i as u32,
        });
    }
}

fn main() -> d3rq::Result<()> {
    let mut buf = ReplayBuffer::new(1024)?;
    // episode 0 ends in a true terminal, episode 1 in a time limit
    push_episode(&mut buf, 0, &[1.0, 1.0, 1.0, 1.0], true);
    push_episode(&mut buf, 1, &[0.5, 0.5, 0.5], false);
    println!("stored {} transitions across 2 episodes", buf.len());

    let gamma = 0.5;
    let mut rng = DetRng::new(3);
    println!("\n3-step samples (gamma = {gamma}):");
    println!("{:>8} {:>6} {:>9} {:>4} {:>10} {:>10}", "episode", "start", "g", "m", "gamma^m", "bootstrap");
    let mut samples = buf.sample_nstep(64, 3, gamma, &mut rng)?;
    samples.sort_by_key(|s| {
        let v = s.obs.as_vector().unwrap();
        (v[0] as u64, v[1] as u64)
    });
    samples.dedup_by_key(|s| s.obs.as_vector().unwrap().to_vec());
    for s in &samples {
        let v = s.obs.as_vector().unwrap();
        println!(
            "{:>8} {:>6} {:>9.4} {:>4} {:>10.4} {:>10}",
            v[0], v[1], s.reward_sum, s.horizon, s.bootstrap_discount, s.bootstrap
        );
    }
    println!("\nnotes:");
    println!("- windows shorten at episode ends rather than crossing them");
    println!("- the terminal episode clears the bootstrap flag on windows that reach it");
    println!("- the truncated episode keeps bootstrapping from its last observation");
    Ok(())
}
