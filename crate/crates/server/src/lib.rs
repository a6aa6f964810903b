//! Navigation service: sessions, confirm/cancel, audit, and the HTTP API.

pub mod audit;
pub mod clients;
pub mod http;
pub mod latency;
pub mod navigator;
pub mod session;
pub mod stub;

pub use audit::{AuditLog, AuditRecord};
pub use latency::{measure_latency, CommandTarget, LatencyError, LatencyReport, RemoteTarget};
pub use navigator::{CommandRequest, NavAction, NavError, NavResponse, Navigator};
