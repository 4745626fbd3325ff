//! Deterministic protocol simulation.
//!
//! Principals and server D run in one thread over a simulated network that
//! carries the real line protocol. The network can drop, replay and tamper
//! with traffic; a monitor watches every exchange and the server's state
//! after every step and records any break of the safety invariants:
//!
//! * a released key always has a re-verifiable NRR record in the log,
//! * no reply carries wrapped-key bytes for a message before a valid
//!   receipt for it was submitted,
//! * one release per message: one log entry and one M6.
//!
//! Everything is derived from a seed; nothing reads the wall clock or OS
//! randomness.

mod fuzz;
pub mod mock;
mod monitor;
mod net;
mod scenario;
mod world;

pub use fuzz::{fuzz_protocol, fuzz_protocol_on, FuzzSummary};
pub use monitor::{Invariant, Violation};
pub use net::{DropKind, SimNet, WireEvent};
pub use scenario::{
    run_scenario, run_scenario_on, Action, Expectation, ExpectationResult, LogSummary, Scenario, ScriptError, Step,
    StepKind, TranscriptReport,
};
pub use world::{Role, Side, StepError, World};

use crate::model::MessageId;
use crate::server::{EscrowState, LogEntry, Server};

/// Read access to server state that the monitor checks. Only the harness
/// uses it; clients never see escrow internals.
pub trait Inspect {
    fn escrow_states(&self) -> Vec<(MessageId, EscrowState)>;
    /// Evidence log entries from position `start` on.
    fn log_entries_from(&self, start: usize) -> Vec<LogEntry>;
}

impl Inspect for Server {
    fn escrow_states(&self) -> Vec<(MessageId, EscrowState)> {
        self.escrow_entries()
            .into_iter()
            .map(|e| (e.message_id, e.state))
            .collect()
    }

    fn log_entries_from(&self, start: usize) -> Vec<LogEntry> {
        self.evidence_log_from(start)
    }
}
