//! Actor and learner loops plus the run orchestrators.
//!
//! One learner owns the agent and the replay; N actor workers own an
//! environment each and a policy refreshed from published weight snapshots
//! (pull-based: actors poll, stale policies are fine off-policy). The
//! lockstep orchestrator drives a single worker and the learner strictly in
//! turn through the same wire machinery, reproducing the single-process
//! train loop byte for byte.

use super::protocol::{WeightVersion, WireMessage, PROTOCOL_VERSION};
use super::transport::{inproc_pair, Connection, InProcConn, SocketConn, SocketListener};
use crate::agent::{AgentConfig, AgentState, Collector, LearnerCore, Policy, TrainResult, TrainSink};
use crate::config::{Config, Transport};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::netcore::{ParamSet, Tensor};
use crate::replay::SharedReplay;
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

/// Env steps between weight polls in free-running workers.
pub const POLL_INTERVAL_STEPS: u64 = 1000;
/// Reconnect attempts before a worker gives up on a lost connection.
const MAX_RECONNECTS: u32 = 5;

// ---------------------------------------------------------------------------
// snapshots

fn snapshot_tensors(policy: &Policy) -> Vec<(String, Tensor)> {
    let mut tensors = Vec::new();
    for (name, t) in policy.actor.iter() {
        tensors.push((format!("actor/{name}"), t.clone()));
    }
    for (name, t) in policy.encoder.iter() {
        tensors.push((format!("encoder/{name}"), t.clone()));
    }
    tensors
}

fn install_snapshot(policy: &mut Policy, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut actor = ParamSet::new();
    let mut encoder = ParamSet::new();
    for (name, tensor) in tensors {
        match name.split_once('/') {
            Some(("actor", p)) => actor.insert(p, tensor.clone())?,
            Some(("encoder", p)) => encoder.insert(p, tensor.clone())?,
            _ => return Err(Error::Protocol(format!("unexpected snapshot tensor {name}"))),
        }
    }
    policy.actor = actor;
    policy.encoder = encoder;
    Ok(())
}

// ---------------------------------------------------------------------------
// hub: the learner-side server

#[derive(Debug, Default, Clone)]
pub struct IngestAudit {
    /// Transitions received per worker id.
    pub received: HashMap<u32, u64>,
    /// (episode, step) pairs seen more than once.
    pub duplicates: u64,
    /// Per-worker ordering violations (older record after newer).
    pub out_of_order: u64,
    seen: std::collections::HashSet<(u64, u32)>,
    last: HashMap<u32, (u64, u32)>,
}

impl IngestAudit {
    fn record(&mut self, episode_id: u64, step_index: u32) {
        let worker = (episode_id >> 32) as u32;
        *self.received.entry(worker).or_insert(0) += 1;
        if !self.seen.insert((episode_id, step_index)) {
            self.duplicates += 1;
        }
        let key = ((episode_id & 0xffff_ffff) as u64, step_index);
        if let Some(&(last_ep, last_step)) = self.last.get(&worker) {
            if key < (last_ep, last_step) {
                self.out_of_order += 1;
            }
        }
        self.last.insert(worker, key);
    }
}

/// Shared learner-side state: replay ingest, the latest published snapshot,
/// and the shutdown flag.
pub struct Hub {
    pub replay: SharedReplay,
    published: RwLock<Option<Arc<(WeightVersion, Vec<(String, Tensor)>)>>>,
    shutdown: AtomicBool,
    audit: Option<Mutex<IngestAudit>>,
}

impl Hub {
    pub fn new(replay: SharedReplay, with_audit: bool) -> Arc<Self> {
        Arc::new(Hub {
            replay,
            published: RwLock::new(None),
            shutdown: AtomicBool::new(false),
            audit: if with_audit { Some(Mutex::new(IngestAudit::default())) } else { None },
        })
    }

    /// Publish a new snapshot; versions must be strictly increasing.
    pub fn publish(&self, version: WeightVersion, policy: &Policy) {
        let mut slot = self.published.write().expect("publish lock");
        if let Some(prev) = slot.as_ref() {
            assert!(version.version > prev.0.version, "weight versions must increase");
        }
        *slot = Some(Arc::new((version, snapshot_tensors(policy))));
    }

    pub fn latest(&self) -> Option<Arc<(WeightVersion, Vec<(String, Tensor)>)>> {
        self.published.read().expect("publish lock").clone()
    }

    pub fn begin_shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_shutdown(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    pub fn audit(&self) -> Option<IngestAudit> {
        self.audit.as_ref().map(|a| a.lock().expect("audit lock").clone())
    }

    fn ingest(&self, t: crate::replay::Transition) {
        if let Some(audit) = &self.audit {
            audit.lock().expect("audit lock").record(t.episode_id, t.step_index);
        }
        self.replay.push(t);
    }

    /// Handle one actor connection until it closes. The first message must
    /// be a HELLO with the current protocol version.
    pub fn serve_connection(self: &Arc<Self>, mut conn: Box<dyn Connection>) -> Result<()> {
        match conn.recv()? {
            WireMessage::Hello { protocol, .. } if protocol == PROTOCOL_VERSION => {}
            WireMessage::Hello { protocol, .. } => {
                conn.send(&WireMessage::Shutdown).ok();
                return Err(Error::Protocol(format!(
                    "protocol version mismatch: worker speaks {protocol}, hub speaks {PROTOCOL_VERSION}"
                )));
            }
            other => {
                return Err(Error::Protocol(format!(
                    "expected HELLO, got {other:?}"
                )))
            }
        }
        loop {
            match conn.recv() {
                Ok(WireMessage::Transition(t)) => self.ingest(t),
                Ok(WireMessage::WeightsRequest) => loop {
                    if self.is_shutdown() {
                        conn.send(&WireMessage::Shutdown)?;
                        break;
                    }
                    // a request can race the first publication; wait it out
                    match self.latest() {
                        Some(snap) => {
                            conn.send(&WireMessage::WeightsSnapshot {
                                version: snap.0.version,
                                step: snap.0.step,
                                tensors: snap.1.clone(),
                            })?;
                            break;
                        }
                        None => std::thread::sleep(Duration::from_millis(1)),
                    }
                },
                Ok(WireMessage::Shutdown) => break,
                Ok(other) => {
                    return Err(Error::Protocol(format!("unexpected message from actor: {other:?}")))
                }
                // actor closed its end; normal termination
                Err(_) => break,
            }
        }
        Ok(())
    }

    pub fn spawn_connection(self: &Arc<Self>, conn: Box<dyn Connection>) -> JoinHandle<Result<()>> {
        let hub = Arc::clone(self);
        std::thread::spawn(move || hub.serve_connection(conn))
    }
}

// ---------------------------------------------------------------------------
// actor loop

#[derive(Debug)]
pub struct ActorOutcome {
    pub steps: u64,
    pub last_version: u64,
}

fn fetch_snapshot(conn: &mut dyn Connection, policy: &mut Policy, current: &mut u64) -> Result<bool> {
    conn.send(&WireMessage::WeightsRequest)?;
    match conn.recv()? {
        WireMessage::WeightsSnapshot { version, tensors, .. } => {
            // versions observed by an actor never decrease
            if version > *current {
                install_snapshot(policy, &tensors)?;
                *current = version;
            }
            Ok(true)
        }
        WireMessage::Shutdown => Ok(false),
        other => Err(Error::Protocol(format!("expected snapshot, got {other:?}"))),
    }
}

/// Free-running collection worker: refresh weights every
/// [`POLL_INTERVAL_STEPS`] env steps, act, push transitions, exit on
/// SHUTDOWN (or after `max_steps` when bounded by a test harness).
/// Connection loss triggers bounded reconnects through `reconnect`.
pub fn actor_loop(
    worker_id: u32,
    cfg: &Config,
    agent_cfg: &AgentConfig,
    mut conn: Box<dyn Connection>,
    reconnect: Option<&dyn Fn() -> Result<Box<dyn Connection>>>,
    max_steps: Option<u64>,
) -> Result<ActorOutcome> {
    conn.send(&WireMessage::Hello { protocol: PROTOCOL_VERSION, worker_id })?;
    let mut policy = Policy {
        actor_spec: agent_cfg.actor_spec.clone(),
        encoder_spec: agent_cfg.encoder_spec.clone(),
        actor: ParamSet::new(),
        encoder: ParamSet::new(),
        action_dim: agent_cfg.action_dim,
    };
    let mut version = 0u64;
    if !fetch_snapshot(conn.as_mut(), &mut policy, &mut version)? {
        return Ok(ActorOutcome { steps: 0, last_version: version });
    }
    let mut collector = Collector::new(cfg, worker_id as u64, cfg.seed)?;
    let mut steps = 0u64;
    let mut failures = 0u32;
    loop {
        if let Some(limit) = max_steps {
            if steps >= limit {
                break;
            }
        }
        if steps > 0 && steps % POLL_INTERVAL_STEPS == 0 {
            match fetch_snapshot(conn.as_mut(), &mut policy, &mut version) {
                Ok(true) => {}
                Ok(false) => break, // orderly shutdown
                Err(e) => {
                    conn = retry_connect(reconnect, worker_id, &mut failures, e)?;
                    fetch_snapshot(conn.as_mut(), &mut policy, &mut version)?;
                }
            }
        }
        let transition = collector.step_once(policy.as_ref(), agent_cfg)?;
        if let Err(e) = conn.send(&WireMessage::Transition(transition)) {
            conn = retry_connect(reconnect, worker_id, &mut failures, e)?;
            continue;
        }
        steps += 1;
    }
    conn.send(&WireMessage::Shutdown).ok();
    Ok(ActorOutcome { steps, last_version: version })
}

fn retry_connect(
    reconnect: Option<&dyn Fn() -> Result<Box<dyn Connection>>>,
    worker_id: u32,
    failures: &mut u32,
    cause: Error,
) -> Result<Box<dyn Connection>> {
    let Some(factory) = reconnect else {
        return Err(Error::Protocol(format!(
            "worker {worker_id} lost its connection: {cause}"
        )));
    };
    loop {
        *failures += 1;
        if *failures > MAX_RECONNECTS {
            return Err(Error::Protocol(format!(
                "worker {worker_id} gave up after {MAX_RECONNECTS} reconnects: {cause}"
            )));
        }
        std::thread::sleep(Duration::from_millis(10 << *failures));
        match factory() {
            Ok(mut conn) => {
                conn.send(&WireMessage::Hello { protocol: PROTOCOL_VERSION, worker_id })?;
                return Ok(conn);
            }
            Err(_) => continue,
        }
    }
}

// ---------------------------------------------------------------------------
// learner loop

/// Number of updates a run of `env_steps` performs: one per `update_freq`
/// env steps once `warmup` steps have been collected.
pub fn planned_updates(env_steps: u64, warmup: u64, update_freq: u64) -> u64 {
    let first = warmup.max(1);
    if env_steps < first {
        return 0;
    }
    env_steps / update_freq - (first - 1) / update_freq
}

/// Free-running learner: wait for warmup, run the planned updates, publish
/// every `publish_interval` updates, emit metric rows on the eval cadence.
pub fn learner_loop(
    mut learner: LearnerCore,
    cfg: &Config,
    hub: &Arc<Hub>,
    sink: &mut dyn TrainSink,
) -> Result<TrainResult> {
    let mut version = match hub.latest() {
        Some(snap) => snap.0,
        None => {
            let v = WeightVersion { version: 1, step: 0 };
            hub.publish(v, &learner.agent.policy());
            v
        }
    };
    let total_updates = planned_updates(cfg.total_env_steps(), cfg.warmup_steps, cfg.update_freq);
    let warmup_fill = cfg.warmup_steps.max(1) as usize;
    while hub.replay.len() < warmup_fill && total_updates > 0 {
        std::thread::sleep(Duration::from_millis(1));
    }
    let mut rows = Vec::new();
    let mut acc = crate::agent::train::LossAccumulator::default();
    let mut eval_index = 0u64;
    for u in 1..=total_updates {
        // nominal env step of this update, mirroring the in-process cadence
        let step = cfg.warmup_steps + (u - 1) * cfg.update_freq;
        learner.agent.step = step;
        match learner.update_once(&hub.replay) {
            Ok(losses) => acc.add(losses),
            Err(Error::InvalidArgument(_)) => {
                // replay starvation: idle-wait and retry
                std::thread::sleep(Duration::from_millis(1));
                continue;
            }
            Err(e) => return Err(e),
        }
        if u % cfg.publish_interval == 0 || u == total_updates {
            version = WeightVersion { version: version.version + 1, step };
            hub.publish(version, &learner.agent.policy());
        }
        if step % cfg.eval_interval == 0 || u == total_updates {
            eval_index += 1;
            let eval = crate::agent::eval_policy(
                &cfg.task,
                cfg.action_repeat,
                learner.agent.policy_ref(),
                cfg.eval_episodes,
                cfg.seed,
                eval_index,
            )?;
            let (c1, c2, al) = acc.take();
            let row = MetricsRow {
                step,
                eval_return: eval.mean,
                critic_loss_1: c1,
                critic_loss_2: c2,
                actor_loss: al,
                sigma: learner.agent.sigma_at(step),
                fps: 0.0,
            };
            sink.on_row(&row)?;
            rows.push(row);
        }
    }
    hub.begin_shutdown();
    Ok(TrainResult { metrics: rows, agent: learner.agent })
}

// ---------------------------------------------------------------------------
// orchestrators

/// Free-running distributed run: N actor threads against one learner.
/// Socket transport runs over localhost TCP; in-process uses channels.
pub fn run_distributed(cfg: &Config, sink: &mut dyn TrainSink) -> Result<TrainResult> {
    let agent_cfg = AgentConfig::from_run_config(cfg)?;
    let agent = AgentState::new(agent_cfg.clone(), cfg.seed)?;
    let replay = SharedReplay::new(cfg.capacity)?;
    let hub = Hub::new(replay.clone(), false);
    hub.publish(WeightVersion { version: 1, step: 0 }, &agent.policy());
    let learner = LearnerCore::new(agent, cfg, cfg.seed);

    let mut hub_threads = Vec::new();
    let mut actor_threads = Vec::new();
    let listener = match cfg.transport {
        Transport::Socket => Some(Arc::new(SocketListener::bind(&cfg.endpoint)?)),
        Transport::Inproc => None,
    };
    let endpoint = listener
        .as_ref()
        .map(|l| l.local_addr())
        .transpose()?
        .unwrap_or_default();

    for worker_id in 0..cfg.workers as u32 {
        let cfg_for_worker = cfg.clone();
        let agent_cfg_for_worker = agent_cfg.clone();
        match cfg.transport {
            Transport::Inproc => {
                let (client, server) = inproc_pair(1024);
                hub_threads.push(hub.spawn_connection(Box::new(server)));
                actor_threads.push(std::thread::spawn(move || {
                    actor_loop(
                        worker_id,
                        &cfg_for_worker,
                        &agent_cfg_for_worker,
                        Box::new(client),
                        None,
                        None,
                    )
                }));
            }
            Transport::Socket => {
                let ep = endpoint.clone();
                actor_threads.push(std::thread::spawn(move || {
                    let conn = SocketConn::connect(&ep)?;
                    let factory = move || -> Result<Box<dyn Connection>> {
                        Ok(Box::new(SocketConn::connect(&ep)?))
                    };
                    actor_loop(
                        worker_id,
                        &cfg_for_worker,
                        &agent_cfg_for_worker,
                        Box::new(conn),
                        Some(&factory),
                        None,
                    )
                }));
                let listener = listener.as_ref().expect("socket mode").clone();
                let hub = Arc::clone(&hub);
                hub_threads.push(std::thread::spawn(move || {
                    let conn = listener.accept()?;
                    hub.serve_connection(Box::new(conn))
                }));
            }
        }
    }

    let result = learner_loop(learner, cfg, &hub, sink)?;
    for handle in actor_threads {
        handle
            .join()
            .map_err(|_| Error::Protocol("actor thread panicked".into()))??;
    }
    for handle in hub_threads {
        handle
            .join()
            .map_err(|_| Error::Protocol("hub thread panicked".into()))??;
    }
    Ok(result)
}

/// Lockstep distributed run: a single worker and the learner alternate
/// deterministically through the wire, reproducing `agent::train` exactly
/// (the equivalence suite compares the metrics byte for byte).
pub fn run_lockstep(cfg: &Config, sink: &mut dyn TrainSink) -> Result<TrainResult> {
    if cfg.workers != 1 {
        return Err(Error::InvalidArgument(
            "lockstep mode drives exactly one worker".into(),
        ));
    }
    let agent_cfg = AgentConfig::from_run_config(cfg)?;
    let agent = AgentState::new(agent_cfg.clone(), cfg.seed)?;
    let replay = SharedReplay::new(cfg.capacity)?;
    let hub = Hub::new(replay.clone(), true);
    let mut learner = LearnerCore::new(agent, cfg, cfg.seed);

    let (mut actor_end, mut hub_end) = inproc_pair(16);
    actor_end.send(&WireMessage::Hello { protocol: PROTOCOL_VERSION, worker_id: 0 })?;
    match hub_end.recv()? {
        WireMessage::Hello { protocol, .. } if protocol == PROTOCOL_VERSION => {}
        other => return Err(Error::Protocol(format!("expected HELLO, got {other:?}"))),
    }
    let mut version = WeightVersion { version: 1, step: 0 };
    hub.publish(version, &learner.agent.policy());

    // pump one request/response pair through the wire
    let refresh = |actor_end: &mut InProcConn,
                   hub_end: &mut InProcConn,
                   policy: &mut Policy,
                   current: &mut u64|
     -> Result<()> {
        actor_end.send(&WireMessage::WeightsRequest)?;
        match hub_end.recv()? {
            WireMessage::WeightsRequest => {
                let snap = hub.latest().expect("published");
                hub_end.send(&WireMessage::WeightsSnapshot {
                    version: snap.0.version,
                    step: snap.0.step,
                    tensors: snap.1.clone(),
                })?;
            }
            other => return Err(Error::Protocol(format!("lockstep expected request, got {other:?}"))),
        }
        match actor_end.recv()? {
            WireMessage::WeightsSnapshot { version, tensors, .. } => {
                if version > *current {
                    install_snapshot(policy, &tensors)?;
                    *current = version;
                }
                Ok(())
            }
            other => Err(Error::Protocol(format!("lockstep expected snapshot, got {other:?}"))),
        }
    };

    let mut policy = Policy {
        actor_spec: agent_cfg.actor_spec.clone(),
        encoder_spec: agent_cfg.encoder_spec.clone(),
        actor: ParamSet::new(),
        encoder: ParamSet::new(),
        action_dim: agent_cfg.action_dim,
    };
    let mut current_version = 0u64;
    refresh(&mut actor_end, &mut hub_end, &mut policy, &mut current_version)?;

    let mut collector = Collector::new(cfg, 0, cfg.seed)?;
    let total_steps = cfg.total_env_steps();
    let mut rows = Vec::new();
    let mut acc = crate::agent::train::LossAccumulator::default();
    let mut eval_index = 0u64;
    for t in 1..=total_steps {
        let transition = collector.step_once(policy.as_ref(), &agent_cfg)?;
        actor_end.send(&WireMessage::Transition(transition))?;
        match hub_end.recv()? {
            WireMessage::Transition(tr) => hub.replay.push(tr),
            other => return Err(Error::Protocol(format!("lockstep expected transition, got {other:?}"))),
        }
        learner.agent.step = t;
        if t >= cfg.warmup_steps && t % cfg.update_freq == 0 {
            let losses = learner.update_once(&hub.replay)?;
            acc.add(losses);
            version = WeightVersion { version: version.version + 1, step: t };
            hub.publish(version, &learner.agent.policy());
            refresh(&mut actor_end, &mut hub_end, &mut policy, &mut current_version)?;
        }
        if t % cfg.eval_interval == 0 {
            eval_index += 1;
            let eval = crate::agent::eval_policy(
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
    hub.begin_shutdown();
    Ok(TrainResult { metrics: rows, agent: learner.agent })
}
