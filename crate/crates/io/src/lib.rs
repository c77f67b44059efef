//! Config documents, telemetry files, the `microteleop` command line and the
//! protocol v1 session server.

pub mod cli;
pub mod config;
pub mod protocol;
pub mod server;
pub mod stability;
pub mod telemetry;

pub use config::{emit_config, parse_config, ConfigError, ParsedConfig};
pub use telemetry::{emit_telemetry, Format, TelemetryWriter};
