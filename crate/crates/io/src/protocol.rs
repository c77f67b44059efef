//! Streaming protocol v1: JSON text messages tagged by `type`.

use microteleop_core::teleop::{Event, FrameFlags, TelemetryFrame};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
/// Most frames a client receives per second.
pub const MAX_FRAME_RATE: f64 = 60.0;
/// Most commands a client may send per second.
pub const MAX_COMMAND_RATE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello { proto: u32, scenario: String },
    /// Hand position in master-device metres.
    Cmd { t: f64, pos: [f64; 2], engage: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaveState {
    pub d: [f64; 3],
    pub v: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub t: f64,
    pub slave: SlaveState,
    /// Force rendered on the handle (N).
    pub force: [f64; 2],
    pub flags: FrameFlags,
}

impl From<&TelemetryFrame<f64>> for FrameMessage {
    fn from(f: &TelemetryFrame<f64>) -> Self {
        Self {
            t: f.t,
            slave: SlaveState { d: f.slave_position.into(), v: f.slave_velocity.into() },
            force: [f.master_force.x, f.master_force.y],
            flags: f.flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { proto: u32, scenario: String },
    Frame(FrameMessage),
    Event(Event),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
