//! Long-running control service for the hand and a blocking client for it.

pub mod client;
pub mod config;
pub mod plant;
pub mod protocol;
pub mod server;

pub use client::{Client, ClientError};
pub use config::{BusBackend, ConfigError, ServiceConfig};
pub use protocol::{ClientMessage, CommandKind, CommandMessage, ServerMessage, TelemetryData, TelemetryMessage};
pub use server::{Service, ServiceError, TickStats};
