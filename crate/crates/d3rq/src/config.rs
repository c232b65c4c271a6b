//! Run configuration.
//!
//! Plain-text `key=value` files, one pair per line, `#` comments. Flag
//! overrides (`--key=value`, hyphens or underscores) win over the file,
//! which wins over the defaults. Unknown keys are errors in both places.
//! Value-distribution bounds default per task to cover every attainable
//! return: `v_min = 0` and `v_max = action_repeat * max_reward / (1 - gamma)`
//! (per-step rewards are in [0, 1] by environment design, and action repeat
//! sums them).

use crate::envsim::task_info;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Categorical,
    Scalar,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Categorical => "categorical",
            Mode::Scalar => "scalar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Inproc,
    Socket,
}

impl Transport {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transport::Inproc => "inproc",
            Transport::Socket => "socket",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub task: String,
    pub total_frames: u64,
    pub seed: u64,
    pub mode: Mode,
    pub n_step: u32,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub action_repeat: usize,
    pub capacity: usize,
    pub warmup_steps: u64,
    pub noise_init: f64,
    pub noise_final: f64,
    pub noise_duration: u64,
    pub noise_clip: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub n_atoms: usize,
    pub hidden_dim: usize,
    pub features_dim: usize,
    pub update_freq: u64,
    pub actor_delay: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: u64,
    pub workers: usize,
    pub transport: Transport,
    pub endpoint: String,
    pub publish_interval: u64,
    pub threads: usize,
    pub out: String,
}

impl Config {
    /// Env steps the run will take (frames counted before action repeat).
    pub fn total_env_steps(&self) -> u64 {
        self.total_frames / self.action_repeat as u64
    }

    /// Serialize as a `key=value` file; reloading reproduces the config.
    pub fn dump(&self) -> String {
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        pairs.insert("task", self.task.clone());
        pairs.insert("total_frames", self.total_frames.to_string());
        pairs.insert("seed", self.seed.to_string());
        pairs.insert("mode", self.mode.as_str().to_string());
        pairs.insert("n_step", self.n_step.to_string());
        pairs.insert("gamma", format!("{:?}", self.gamma));
        pairs.insert("batch_size", self.batch_size.to_string());
        pairs.insert("learning_rate", format!("{:?}", self.learning_rate));
        pairs.insert("tau", format!("{:?}", self.tau));
        pairs.insert("action_repeat", self.action_repeat.to_string());
        pairs.insert("capacity", self.capacity.to_string());
        pairs.insert("warmup_steps", self.warmup_steps.to_string());
        pairs.insert("noise_init", format!("{:?}", self.noise_init));
        pairs.insert("noise_final", format!("{:?}", self.noise_final));
        pairs.insert("noise_duration", self.noise_duration.to_string());
        pairs.insert("noise_clip", format!("{:?}", self.noise_clip));
        pairs.insert("v_min", format!("{:?}", self.v_min));
        pairs.insert("v_max", format!("{:?}", self.v_max));
        pairs.insert("n_atoms", self.n_atoms.to_string());
        pairs.insert("hidden_dim", self.hidden_dim.to_string());
        pairs.insert("features_dim", self.features_dim.to_string());
        pairs.insert("update_freq", self.update_freq.to_string());
        pairs.insert("actor_delay", self.actor_delay.to_string());
        pairs.insert("eval_interval", self.eval_interval.to_string());
        pairs.insert("eval_episodes", self.eval_episodes.to_string());
        pairs.insert("checkpoint_interval", self.checkpoint_interval.to_string());
        pairs.insert("workers", self.workers.to_string());
        pairs.insert("transport", self.transport.as_str().to_string());
        pairs.insert("endpoint", self.endpoint.clone());
        pairs.insert("publish_interval", self.publish_interval.to_string());
        pairs.insert("threads", self.threads.to_string());
        pairs.insert("out", self.out.clone());
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// Raw key/value assignments before resolution.
#[derive(Debug, Default)]
struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    fn parse_file(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

const KNOWN_KEYS: [&str; 32] = [
    "out",
    "threads",
    "task",
    "total_frames",
    "seed",
    "mode",
    "n_step",
    "gamma",
    "batch_size",
    "learning_rate",
    "tau",
    "action_repeat",
    "capacity",
    "warmup_steps",
    "noise_init",
    "noise_final",
    "noise_duration",
    "noise_clip",
    "v_min",
    "v_max",
    "n_atoms",
    "hidden_dim",
    "features_dim",
    "update_freq",
    "actor_delay",
    "eval_interval",
    "eval_episodes",
    "checkpoint_interval",
    "workers",
    "transport",
    "endpoint",
    "publish_interval",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={value:?}")))
}

/// Load the effective config: defaults, then `path` (if given), then flag
/// `overrides`, each later source winning.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
    let mut raw = RawConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        raw.parse_file(&text)?;
    }
    for (key, value) in overrides {
        raw.set(key, value)?;
    }
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<Config> {
    let get = |key: &str| raw.values.get(key).map(|s| s.as_str());

    let task = get("task").unwrap_or("pendulum").to_string();
    let info = task_info(&task)?;
    let gamma: f64 = match get("gamma") {
        Some(v) => parse_num("gamma", v)?,
        None => 0.99,
    };
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
    }
    let action_repeat: usize = match get("action_repeat") {
        Some(v) => parse_num("action_repeat", v)?,
        None => 2,
    };
    if action_repeat < 1 {
        return Err(Error::Config("action_repeat must be >= 1".into()));
    }

    let mode = match get("mode").unwrap_or("categorical") {
        "categorical" => Mode::Categorical,
        "scalar" => Mode::Scalar,
        other => return Err(Error::Config(format!("unknown mode {other:?}"))),
    };
    let transport = match get("transport").unwrap_or("inproc") {
        "inproc" => Transport::Inproc,
        "socket" => Transport::Socket,
        other => return Err(Error::Config(format!("unknown transport {other:?}"))),
    };

    // support bounds cover every attainable return for the task
    let v_min = match get("v_min") {
        Some(v) => parse_num("v_min", v)?,
        None => 0.0,
    };
    let v_max = match get("v_max") {
        Some(v) => parse_num("v_max", v)?,
        None => action_repeat as f64 * info.max_reward / (1.0 - gamma),
    };
    if v_max <= v_min {
        return Err(Error::Config(format!("v_max {v_max} must exceed v_min {v_min}")));
    }

    let cfg = Config {
        task,
        total_frames: match get("total_frames") {
            Some(v) => parse_num("total_frames", v)?,
            None => 100_000,
        },
        seed: match get("seed") {
            Some(v) => parse_num("seed", v)?,
            None => 1,
        },
        mode,
        n_step: match get("n_step") {
            Some(v) => parse_num("n_step", v)?,
            None => 3,
        },
        gamma,
        batch_size: match get("batch_size") {
            Some(v) => parse_num("batch_size", v)?,
            None => 256,
        },
        learning_rate: match get("learning_rate") {
            Some(v) => parse_num("learning_rate", v)?,
            None => 1e-4,
        },
        tau: match get("tau") {
            Some(v) => parse_num("tau", v)?,
            None => 0.01,
        },
        action_repeat,
        capacity: match get("capacity") {
            Some(v) => parse_num("capacity", v)?,
            None => 1_000_000,
        },
        warmup_steps: match get("warmup_steps") {
            Some(v) => parse_num("warmup_steps", v)?,
            None => 2000,
        },
        noise_init: match get("noise_init") {
            Some(v) => parse_num("noise_init", v)?,
            None => 1.0,
        },
        noise_final: match get("noise_final") {
            Some(v) => parse_num("noise_final", v)?,
            None => 0.05,
        },
        noise_duration: match get("noise_duration") {
            Some(v) => parse_num("noise_duration", v)?,
            None => 50_000,
        },
        noise_clip: match get("noise_clip") {
            Some(v) => parse_num("noise_clip", v)?,
            None => 0.2,
        },
        v_min,
        v_max,
        n_atoms: match get("n_atoms") {
            Some(v) => parse_num("n_atoms", v)?,
            None => 51,
        },
        hidden_dim: match get("hidden_dim") {
            Some(v) => parse_num("hidden_dim", v)?,
            None => 1024,
        },
        features_dim: match get("features_dim") {
            Some(v) => parse_num("features_dim", v)?,
            None => 50,
        },
        update_freq: match get("update_freq") {
            Some(v) => parse_num("update_freq", v)?,
            None => 2,
        },
        actor_delay: match get("actor_delay") {
            Some(v) => parse_num("actor_delay", v)?,
            None => 1,
        },
        eval_interval: match get("eval_interval") {
            Some(v) => parse_num("eval_interval", v)?,
            None => 2000,
        },
        eval_episodes: match get("eval_episodes") {
            Some(v) => parse_num("eval_episodes", v)?,
            None => 10,
        },
        checkpoint_interval: match get("checkpoint_interval") {
            Some(v) => parse_num("checkpoint_interval", v)?,
            None => 10_000,
        },
        workers: match get("workers") {
            Some(v) => parse_num("workers", v)?,
            None => 1,
        },
        transport,
        endpoint: get("endpoint").unwrap_or("127.0.0.1:47630").to_string(),
        publish_interval: match get("publish_interval") {
            Some(v) => parse_num("publish_interval", v)?,
            None => 50,
        },
        threads: match get("threads") {
            Some(v) => parse_num("threads", v)?,
            None => 2,
        },
        out: get("out").unwrap_or("out").to_string(),
    };

    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<()> {
    let err = |msg: String| Err(Error::Config(msg));
    if cfg.n_step < 1 {
        return err("n_step must be >= 1".into());
    }
    if !(0.0..=1.0).contains(&cfg.tau) {
        return err(format!("tau {} outside [0, 1]", cfg.tau));
    }
    if cfg.batch_size < 1 {
        return err("batch_size must be >= 1".into());
    }
    if cfg.learning_rate <= 0.0 || !cfg.learning_rate.is_finite() {
        return err(format!("learning_rate {} must be positive", cfg.learning_rate));
    }
    if cfg.capacity < 1 {
        return err("capacity must be >= 1".into());
    }
    if cfg.noise_final > cfg.noise_init {
        return err(format!(
            "noise_final {} exceeds noise_init {}",
            cfg.noise_final, cfg.noise_init
        ));
    }
    if cfg.noise_init < 0.0 || cfg.noise_clip <= 0.0 {
        return err("noise stddev must be >= 0 and clip positive".into());
    }
    if cfg.noise_duration < 1 {
        return err("noise_duration must be >= 1".into());
    }
    if cfg.n_atoms < 2 {
        return err("n_atoms must be >= 2".into());
    }
    if cfg.hidden_dim < 1 || cfg.features_dim < 1 {
        return err("hidden_dim and features_dim must be >= 1".into());
    }
    if cfg.update_freq < 1 || cfg.eval_interval < 1 || cfg.actor_delay < 1 {
        return err("update_freq, eval_interval and actor_delay must be >= 1".into());
    }
    if cfg.eval_episodes < 1 {
        return err("eval_episodes must be >= 1".into());
    }
    if cfg.workers < 1 {
        return err("workers must be >= 1".into());
    }
    if cfg.publish_interval < 1 {
        return err("publish_interval must be >= 1".into());
    }
    if cfg.threads < 1 {
        return err("threads must be >= 1".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("d3rq_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("cfg_{}.txt", content.len()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn empty_file_gives_stock_defaults() {
        let path = tmp_file("");
        let cfg = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.tau, 0.01);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.action_repeat, 2);
        assert_eq!(cfg.n_step, 3);
        assert_eq!(cfg.warmup_steps, 2000);
        assert_eq!(cfg.capacity, 1_000_000);
        assert_eq!(cfg.noise_clip, 0.2);
        assert_eq!(cfg.hidden_dim, 1024);
        assert_eq!(cfg.features_dim, 50);
        assert_eq!(cfg.update_freq, 2);
        assert_eq!(cfg.n_atoms, 51);
        assert_eq!(cfg.v_min, 0.0);
        // 2 * 1.0 / (1 - 0.99)
        assert!((cfg.v_max - 2.0 / 0.01).abs() < 1e-9);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let path = tmp_file("gamma=0.9\n# comment\nseed=7\n");
        let cfg = load_config(Some(&path), &[("gamma".into(), "0.8".into())]).unwrap();
        assert_eq!(cfg.gamma, 0.8);
        assert_eq!(cfg.seed, 7);
        // hyphenated flag keys normalize
        let cfg = load_config(Some(&path), &[("n-step".into(), "5".into())]).unwrap();
        assert_eq!(cfg.n_step, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let path = tmp_file("gampa=0.9\n");
        assert!(load_config(Some(&path), &[]).is_err());
        let path = tmp_file("gamma=fast\n");
        assert!(load_config(Some(&path), &[]).is_err());
        let path = tmp_file("gamma=1.5\n");
        assert!(load_config(Some(&path), &[]).is_err());
        assert!(load_config(None, &[("mode".into(), "fuzzy".into())]).is_err());
        assert!(load_config(None, &[("task".into(), "walker".into())]).is_err());
    }

    #[test]
    fn dump_roundtrips() {
        let cfg = load_config(
            None,
            &[
                ("task".into(), "pointmass".into()),
                ("gamma".into(), "0.95".into()),
                ("mode".into(), "scalar".into()),
                ("workers".into(), "3".into()),
            ],
        )
        .unwrap();
        let path = tmp_file(&cfg.dump());
        let reloaded = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg, reloaded);
    }
}
