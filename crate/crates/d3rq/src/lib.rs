//! Distributional actor-critic engine for continuous control.
//!
//! The engine combines a deterministic actor with twin categorical critics
//! trained on n-step distributional Bellman targets, random-shift image
//! augmentation for pixel observations, and an actor-learner runtime that
//! scales from a single process to socket-connected workers. Everything is
//! plain Rust over `f64` buffers, which keeps runs bit-reproducible and lets
//! the test suite compare the learning stack against exact tabular oracles.
//!
//! Module map:
//!
//! - [`valuedist`] — categorical value distributions: support grids, softmax
//!   normalization, the shift-and-scale Bellman map, projection, and the
//!   cross-entropy loss with analytic gradients.
//! - [`netcore`] — minimal differentiable network stack (MLP + strided conv)
//!   with reverse-mode gradients, Adam, orthogonal init, Polyak updates, and
//!   a binary checkpoint format.
//! - [`augment`] — replicate-pad + bilinear random-shift image augmentation.
//! - [`envsim`] — desk-scale environments (pendulum swing-up, point-mass,
//!   a 6-state chain MDP) plus action-repeat / frame-stack / time-limit
//!   wrappers.
//! - [`replay`] — FIFO transition store with sample-time n-step composition.
//! - [`agent`] — the actor-critic agent itself: exploration schedule,
//!   critic targets, critic/actor updates, and the single-process train loop.
//! - [`oracle`] — exact machinery on finite MDPs: linear-solve Q values,
//!   iterated projected distributional evaluation, n-step operators, and
//!   brute-force return enumeration.
//! - [`distrib`] — actor-learner runtime: framed wire protocol, in-process
//!   and socket transports, actor/learner loops, lockstep equivalence mode.
//! - [`config`] / [`cli`] — key=value configuration with hyper-parameter
//!   defaults, and the `train` / `eval` / `verify` command entry points.

pub mod agent;
pub mod augment;
pub mod cli;
pub mod config;
pub mod distrib;
pub mod envsim;
pub mod error;
pub mod metrics;
pub mod netcore;
pub mod oracle;
pub mod replay;
pub mod rng;
pub mod valuedist;
pub mod verify;

pub use error::{Error, Result};
