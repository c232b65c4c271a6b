//! The actor-learner runtime three ways: a lockstep single-worker run that
//! reproduces the in-process trainer exactly, a free-running multi-worker
//! run over in-process channels, and the same over localhost TCP.
//!
//!     cargo run --release --example distributed_workers

use d3rq::agent::{train, NullSink};
use d3rq::config::{load_config, Config, Transport};
use d3rq::distrib::{run_distributed, run_lockstep};
use d3rq::metrics::to_csv_string;

fn base_config(workers: usize) -> d3rq::Result<Config> {
    load_config(
        None,
        &[
            ("task".into(), "pointmass".into()),
            ("total_frames".into(), "4000".into()),
            ("hidden_dim".into(), "16".into()),
            ("n_atoms".into(), "21".into()),
            ("batch_size".into(), "32".into()),
            ("warmup_steps".into(), "100".into()),
            ("noise_duration".into(), "1000".into()),
            ("eval_interval".into(), "500".into()),
            ("eval_episodes".into(), "3".into()),
            ("publish_interval".into(), "1".into()),
            ("workers".into(), workers.to_string()),
            ("seed".into(), "5".into()),
        ],
    )
}

fn main() -> d3rq::Result<()> {
    // lockstep: one worker and the learner alternate through the wire
    let cfg = base_config(1)?;
    let single = train(&cfg, &mut NullSink)?;
    let lockstep = run_lockstep(&cfg, &mut NullSink)?;
    let same = to_csv_string(&single.metrics) == to_csv_string(&lockstep.metrics);
    println!(
        "lockstep vs single-process: {} rows, byte-identical metrics: {same}",
        lockstep.metrics.len()
    );
    assert!(same);

    // free-running workers over in-process channels
    let cfg = base_config(3)?;
    let result = run_distributed(&cfg, &mut NullSink)?;
    println!(
        "3 in-process workers: {} updates, final eval_return {:.3}",
        result.agent.opt_critic1.step_count(),
        result.metrics.last().map(|r| r.eval_return).unwrap_or(f64::NAN)
    );

    // the same protocol over localhost TCP
    let mut cfg = base_config(2)?;
    cfg.transport = Transport::Socket;
    cfg.endpoint = "127.0.0.1:0".into(); // pick any free port
    let result = run_distributed(&cfg, &mut NullSink)?;
    println!(
        "2 socket workers: {} updates, final eval_return {:.3}",
        result.agent.opt_critic1.step_count(),
        result.metrics.last().map(|r| r.eval_return).unwrap_or(f64::NAN)
    );
    Ok(())
}
