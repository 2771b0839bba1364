//! Session orchestration: the deterministic [`Session`], recordings and
//! replay, and the socket server around them.

pub mod record;
pub mod server;
pub mod session;

pub use record::{read_log, replay, write_log, LogEntry, Recorder, ReplayOutcome, TimingReport, WorkItem};
pub use server::{start, HubHandle, HubSummary, ServeOptions};
pub use session::{GazeOutcome, HandshakeError, HubError, ParticipantStats, Received, Session};
