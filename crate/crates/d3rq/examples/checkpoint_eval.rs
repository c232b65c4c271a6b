//! Checkpoint round trip: train briefly, save, reload, and verify the
//! restored policy evaluates identically.
//!
//!     cargo run --release --example checkpoint_eval

use d3rq::agent::{eval_policy, train, AgentState, NullSink};
use d3rq::config::load_config;

fn main() -> d3rq::Result<()> {
    let cfg = load_config(
        None,
        &[
            ("task".into(), "pointmass".into()),
            ("total_frames".into(), "4000".into()),
            ("hidden_dim".into(), "32".into()),
            ("warmup_steps".into(), "200".into()),
            ("noise_duration".into(), "1000".into()),
            ("eval_interval".into(), "1000".into()),
            ("seed".into(), "11".into()),
        ],
    )?;
    let result = train(&cfg, &mut NullSink)?;
    println!("trained {} env steps on {}", result.agent.step, cfg.task);

    let dir = std::env::temp_dir().join("d3rq_checkpoint_eval");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("agent.d3rq");
    result.agent.save_checkpoint(&path)?;
    println!("checkpoint written to {}", path.display());

    let restored = AgentState::load_checkpoint(&path)?;
    let before = eval_policy(&cfg.task, cfg.action_repeat, result.agent.policy_ref(), 5, 99, 0)?;
    let after = eval_policy(&cfg.task, cfg.action_repeat, restored.policy_ref(), 5, 99, 0)?;
    println!("\n{:>8} {:>14} {:>14}", "episode", "before save", "after load");
    for (i, (a, b)) in before.returns.iter().zip(&after.returns).enumerate() {
        println!("{i:>8} {a:>14.6} {b:>14.6}");
    }
    assert_eq!(before.returns, after.returns, "restored policy must match exactly");
    println!("\nrestored policy reproduces every return bit for bit");
    Ok(())
}
