//! Actor-learner runtime.
//!
//! N collection workers push transitions to one learner over a framed wire
//! protocol and poll it for versioned weight snapshots. The same protocol
//! runs over bounded in-process channels or TCP sockets; a lockstep mode
//! drives one worker and the learner strictly in turn for equivalence
//! testing against the single-process train loop.

mod protocol;
mod runtime;
mod transport;

pub use protocol::{
    decode_frame, encode_frame, WeightVersion, WireMessage, PROTOCOL_VERSION, TYPE_HELLO,
    TYPE_SHUTDOWN, TYPE_TRANSITION, TYPE_WEIGHTS_REQUEST, TYPE_WEIGHTS_SNAPSHOT,
};
pub use runtime::{
    actor_loop, learner_loop, planned_updates, run_distributed, run_lockstep, ActorOutcome, Hub,
    IngestAudit, POLL_INTERVAL_STEPS,
};
pub use transport::{inproc_pair, Connection, InProcConn, SocketConn, SocketListener};
