//! Live teleoperation of a running simulation over WebSocket.

pub mod error;
pub mod mailbox;
pub mod server;
pub mod session;
pub mod wire;

pub use error::TeleopError;
pub use mailbox::{CommandKind, Mailbox};
pub use server::{decimation_for, serve, ServeConfig, Server};
pub use session::{Cadence, Session, Shared};
pub use wire::{snapshot_schema_version, ClientFrame, ServerFrame, StateSnapshot, SCHEMA_VERSION};
