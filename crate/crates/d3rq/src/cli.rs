//! Command-line entry points: `train`, `eval`, and `verify`.
//!
//! `train` runs the single-process loop (or the distributed runtime when
//! more than one worker is configured), writing `metrics.csv`,
//! `config.effective`, and checkpoints under the output directory. `eval`
//! rolls out a checkpointed policy deterministically. `verify` runs the
//! named invariant suite and fails the process if any check fails.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use crate::agent::{eval_policy, train, AgentState, TrainSink};
use crate::config::{load_config, Config};
use crate::distrib::run_distributed;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, CSV_HEADER};
use crate::verify::run_suites;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

pub const USAGE: &str = "\
usage:
  d3rq train  [--config PATH] [--out DIR] [--<key>=<value> ...]
  d3rq eval   --checkpoint PATH [--task NAME] [--episodes N] [--seed N]
              [--action-repeat N]
  d3rq verify {projection|gradients|replay|oracle|protocol|all}

train keys mirror the config file (key=value, # comments); flags win over
the file, the file wins over the built-in defaults.";

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_sig: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

/// Install a SIGINT handler that lets run loops shut workers down cleanly.
pub fn install_signal_handler() {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
}

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

/// Parsed command line: positional command plus `--key[=value]` flags.
struct Args {
    command: String,
    flags: Vec<(String, String)>,
}

fn parse_args(argv: &[String]) -> std::result::Result<Args, String> {
    let mut it = argv.iter();
    let command = it.next().cloned().ok_or_else(|| "missing command".to_string())?;
    let mut flags = Vec::new();
    let mut pending: Option<String> = None;
    for arg in it {
        if let Some(key) = pending.take() {
            flags.push((key, arg.clone()));
            continue;
        }
        if let Some(body) = arg.strip_prefix("--") {
            match body.split_once('=') {
                Some((k, v)) => flags.push((k.to_string(), v.to_string())),
                None => pending = Some(body.to_string()),
            }
        } else {
            flags.push(("".to_string(), arg.clone()));
        }
    }
    if let Some(key) = pending {
        return Err(format!("flag --{key} is missing a value"));
    }
    Ok(Args { command, flags })
}

/// Run the CLI; returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let args = match parse_args(argv) {
        Ok(args) => args,
        Err(msg) => {
            eprintln!("error: {msg}\n{USAGE}");
            return 2;
        }
    };
    let outcome = match args.command.as_str() {
        "train" => cmd_train_from_flags(&args.flags),
        "eval" => cmd_eval_from_flags(&args.flags),
        "verify" => cmd_verify_from_flags(&args.flags),
        other => {
            eprintln!("error: unknown command {other:?}\n{USAGE}");
            return 2;
        }
    };
    match outcome {
        Ok(code) => code,
        Err(Error::Config(msg)) | Err(Error::InvalidArgument(msg)) => {
            eprintln!("error: {msg}\n{USAGE}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// train

fn cmd_train_from_flags(flags: &[(String, String)]) -> Result<i32> {
    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    for (key, value) in flags {
        match key.as_str() {
            "config" => config_path = Some(PathBuf::from(value)),
            "" => {
                return Err(Error::Config(format!(
                    "unexpected positional argument {value:?}"
                )))
            }
            _ => overrides.push((key.clone(), value.clone())),
        }
    }
    let cfg = load_config(config_path.as_deref(), &overrides)?;
    cmd_train(&cfg)?;
    Ok(0)
}

/// Sink that streams rows to `metrics.csv`, keeps checkpoints fresh, and
/// prints progress (with live wall-clock throughput) to stdout.
struct RunSink {
    csv: std::fs::File,
    out_dir: PathBuf,
    started: Instant,
    last_step: u64,
    action_repeat: u64,
}

impl RunSink {
    fn new(out_dir: &Path, action_repeat: u64) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let mut csv = std::fs::File::create(out_dir.join("metrics.csv"))?;
        writeln!(csv, "{CSV_HEADER}")?;
        Ok(RunSink {
            csv,
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            last_step: 0,
            action_repeat,
        })
    }
}

impl TrainSink for RunSink {
    fn on_row(&mut self, row: &MetricsRow) -> Result<()> {
        if interrupted() {
            return Err(Error::Env("interrupted".into()));
        }
        writeln!(self.csv, "{}", row.to_csv())?;
        self.csv.flush()?;
        let elapsed = self.started.elapsed().as_secs_f64().max(1e-9);
        let frames = row.step * self.action_repeat;
        println!(
            "step {:>8}  eval_return {:>10.3}  critic ({:.4}, {:.4})  actor {:.4}  sigma {:.3}  [{:.0} fps live]",
            row.step,
            row.eval_return,
            row.critic_loss_1,
            row.critic_loss_2,
            row.actor_loss,
            row.sigma,
            frames as f64 / elapsed,
        );
        self.last_step = row.step;
        Ok(())
    }

    fn on_checkpoint(&mut self, agent: &AgentState, _step: u64) -> Result<()> {
        if interrupted() {
            return Err(Error::Env("interrupted".into()));
        }
        agent.save_checkpoint(&self.out_dir.join("latest.d3rq"))
    }
}

/// Run a training job per the config:  single-process for one worker, the
/// distributed runtime otherwise. Writes `config.effective`, `metrics.csv`,
/// periodic `latest.d3rq` and a final `final.d3rq`.
pub fn cmd_train(cfg: &Config) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.effective"), cfg.dump())?;
    let mut sink = RunSink::new(&out_dir, cfg.action_repeat as u64)?;
    let result = if cfg.workers > 1 {
        run_distributed(cfg, &mut sink)?
    } else {
        train(cfg, &mut sink)?
    };
    result.agent.save_checkpoint(&out_dir.join("final.d3rq"))?;
    println!(
        "done: {} rows, final checkpoint at {}",
        result.metrics.len(),
        out_dir.join("final.d3rq").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval_from_flags(flags: &[(String, String)]) -> Result<i32> {
    let mut checkpoint: Option<PathBuf> = None;
    let mut task = "pendulum".to_string();
    let mut episodes = 10usize;
    let mut seed = 1u64;
    let mut action_repeat = 2usize;
    for (key, value) in flags {
        match key.as_str() {
            "checkpoint" => checkpoint = Some(PathBuf::from(value)),
            "task" => task = value.clone(),
            "episodes" => {
                episodes = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad --episodes {value:?}")))?
            }
            "seed" => {
                seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad --seed {value:?}")))?
            }
            "action-repeat" | "action_repeat" => {
                action_repeat = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad --action-repeat {value:?}")))?
            }
            other => return Err(Error::Config(format!("unknown eval flag --{other}"))),
        }
    }
    let checkpoint =
        checkpoint.ok_or_else(|| Error::Config("eval requires --checkpoint PATH".into()))?;
    let report = cmd_eval(&checkpoint, &task, episodes, seed, action_repeat)?;
    for (i, ret) in report.returns.iter().enumerate() {
        println!("episode {i}: return {ret}");
    }
    println!("mean {} stddev {}", report.mean, report.stddev);
    Ok(0)
}

/// Deterministic evaluation of a checkpointed policy.
pub fn cmd_eval(
    checkpoint: &Path,
    task: &str,
    episodes: usize,
    seed: u64,
    action_repeat: usize,
) -> Result<crate::agent::EvalReport> {
    let agent = AgentState::load_checkpoint(checkpoint)?;
    let info = crate::envsim::task_info(task)?;
    let feat = agent.cfg.encoder_spec.feat_dim();
    let obs_ok = match info.obs_spec {
        crate::envsim::ObsSpec::Vector(dim) => {
            matches!(agent.cfg.encoder_spec, crate::agent::EncoderSpec::Identity { dim: d } if d == dim)
        }
        crate::envsim::ObsSpec::Image(shape) => {
            matches!(&agent.cfg.encoder_spec, crate::agent::EncoderSpec::Conv(c) if c.in_shape == shape)
        }
    };
    if !obs_ok || agent.cfg.action_dim != info.action_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint (features {feat}, actions {}) does not match task {task:?}",
            agent.cfg.action_dim
        )));
    }
    eval_policy(task, action_repeat, agent.policy_ref(), episodes, seed, 0)
}

// ---------------------------------------------------------------------------
// verify

fn cmd_verify_from_flags(flags: &[(String, String)]) -> Result<i32> {
    let mut suite: Option<String> = None;
    for (key, value) in flags {
        match key.as_str() {
            "" if suite.is_none() => suite = Some(value.clone()),
            other => return Err(Error::Config(format!("unknown verify flag --{other}"))),
        }
    }
    let suite = suite.ok_or_else(|| Error::Config("verify requires a suite name".into()))?;
    cmd_verify(&suite)
}

/// Run the named suite(s); print one line per check and fail on any miss.
pub fn cmd_verify(suite: &str) -> Result<i32> {
    let reports = run_suites(suite)?;
    let mut all_pass = true;
    for report in &reports {
        println!("suite {} ({:.2}s)", report.suite, report.seconds);
        for check in &report.checks {
            println!(
                "  [{}] {}: observed {:.3e}, tolerance {:.3e}",
                if check.pass { "PASS" } else { "FAIL" },
                check.name,
                check.observed,
                check.tolerance,
            );
            all_pass &= check.pass;
        }
    }
    Ok(if all_pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&[]), 2);
        assert_eq!(run(&["launch".into()]), 2);
        assert_eq!(run(&["verify".into(), "bogus".into()]), 2);
        assert_eq!(run(&["eval".into()]), 2);
        assert_eq!(run(&["train".into(), "--gampa=1".into()]), 2);
    }

    #[test]
    fn verify_command_runs_a_suite() {
        assert_eq!(cmd_verify("projection").unwrap(), 0);
    }

    #[test]
    fn zero_frame_train_writes_header_only_csv_and_checkpoint() {
        let dir = std::env::temp_dir().join("d3rq_cli_train0");
        std::fs::remove_dir_all(&dir).ok();
        let cfg = load_config(
            None,
            &flags(&[
                ("task", "pointmass"),
                ("total_frames", "0"),
                ("hidden_dim", "8"),
                ("n_atoms", "5"),
                ("out", dir.to_str().unwrap()),
            ]),
        )
        .unwrap();
        cmd_train(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
        assert!(dir.join("final.d3rq").exists());
        assert!(dir.join("config.effective").exists());
        // the effective config reloads to the same value
        let reloaded = load_config(Some(&dir.join("config.effective")), &[]).unwrap();
        assert_eq!(reloaded, cfg);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn train_twice_same_seed_is_byte_identical() {
        let dir_a = std::env::temp_dir().join("d3rq_cli_det_a");
        let dir_b = std::env::temp_dir().join("d3rq_cli_det_b");
        for dir in [&dir_a, &dir_b] {
            std::fs::remove_dir_all(dir).ok();
            let cfg = load_config(
                None,
                &flags(&[
                    ("task", "pointmass"),
                    ("total_frames", "400"),
                    ("hidden_dim", "8"),
                    ("n_atoms", "5"),
                    ("batch_size", "8"),
                    ("warmup_steps", "20"),
                    ("eval_interval", "100"),
                    ("eval_episodes", "2"),
                    ("noise_duration", "100"),
                    ("seed", "3"),
                    ("out", dir.to_str().unwrap()),
                ]),
            )
            .unwrap();
            cmd_train(&cfg).unwrap();
        }
        let a = std::fs::read(dir_a.join("metrics.csv")).unwrap();
        let b = std::fs::read(dir_b.join("metrics.csv")).unwrap();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir_a).ok();
        std::fs::remove_dir_all(&dir_b).ok();
    }

    #[test]
    fn eval_checkpoint_roundtrip_matches_and_rejects_wrong_task() {
        let dir = std::env::temp_dir().join("d3rq_cli_eval");
        std::fs::remove_dir_all(&dir).ok();
        let cfg = load_config(
            None,
            &flags(&[
                ("task", "pointmass"),
                ("total_frames", "0"),
                ("hidden_dim", "8"),
                ("n_atoms", "5"),
                ("out", dir.to_str().unwrap()),
            ]),
        )
        .unwrap();
        cmd_train(&cfg).unwrap();
        let ckpt = dir.join("final.d3rq");
        let a = cmd_eval(&ckpt, "pointmass", 3, 7, 2).unwrap();
        let b = cmd_eval(&ckpt, "pointmass", 3, 7, 2).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.returns.len(), 3);
        let single = cmd_eval(&ckpt, "pointmass", 1, 7, 2).unwrap();
        assert_eq!(single.stddev, 0.0);
        // pendulum has 3-dim observations; the 4-dim checkpoint must refuse
        assert!(cmd_eval(&ckpt, "pendulum", 1, 7, 2).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
