//! WebSocket session server. Each connection runs its own simulation at
//! wall-clock pace (times `speed`).

#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use microteleop_core::scenarios::ScenarioConfig;
use microteleop_core::teleop::{OperatorCommand, TeleopSession};
use nalgebra::Vector3;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::config::scenario_kind;
use crate::protocol::{ClientMessage, FrameMessage, ServerMessage, MAX_FRAME_RATE, PROTOCOL_VERSION};

const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
const POLL: Duration = Duration::from_millis(1);
/// Bound on simulation steps between two polls of the socket.
const MAX_STEPS_PER_POLL: u64 = 200;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Configs served under their scenario name, replacing the defaults.
    pub overrides: BTreeMap<String, ScenarioConfig<f64>>,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { overrides: BTreeMap::new(), speed: 1.0 }
    }
}

impl ServerOptions {
    fn scenario(&self, name: &str) -> Option<ScenarioConfig<f64>> {
        self.overrides.get(name).cloned().or_else(|| scenario_kind(name).map(|k| k.default_config()))
    }
}

/// Accepts connections forever, one thread per session.
pub fn serve(listener: TcpListener, options: ServerOptions) -> std::io::Result<()> {
    let options = Arc::new(options);
    for stream in listener.incoming() {
        let stream = stream?;
        let options = Arc::clone(&options);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = run_session(stream, &options) {
                eprintln!("session {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

fn close(ws: &mut WebSocket<TcpStream>, code: CloseCode, reason: String) -> tungstenite::Result<()> {
    ws.close(Some(CloseFrame { code, reason: reason.into() }))?;
    // let the close handshake finish
    loop {
        match ws.read() {
            Ok(_) => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_json()))
}

fn run_session(stream: TcpStream, options: &ServerOptions) -> tungstenite::Result<()> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(HELLO_TIMEOUT))?;

    let text = match ws.read()? {
        Message::Text(t) => t,
        _ => return close(&mut ws, CloseCode::Protocol, "expected a hello message".into()),
    };
    let (proto, name) = match serde_json::from_str::<ClientMessage>(&text) {
        Ok(ClientMessage::Hello { proto, scenario }) => (proto, scenario),
        _ => return close(&mut ws, CloseCode::Protocol, "expected a hello message".into()),
    };
    if proto != PROTOCOL_VERSION {
        let reason = format!("unsupported protocol version {proto}; server speaks {PROTOCOL_VERSION}");
        return close(&mut ws, CloseCode::Protocol, reason);
    }
    let Some(cfg) = options.scenario(&name) else {
        return close(&mut ws, CloseCode::Policy, format!("unknown scenario `{name}`"));
    };
    let mut session = match TeleopSession::new(cfg.teleop) {
        Ok(s) => s,
        Err(e) => return close(&mut ws, CloseCode::Error, format!("invalid scenario: {e}")),
    };
    send(&mut ws, &ServerMessage::Hello { proto: PROTOCOL_VERSION, scenario: cfg.kind.name().into() })?;
    ws.get_mut().set_read_timeout(Some(POLL))?;

    let dt = session.config().dt;
    let frame_interval = Duration::from_secs_f64(1.0 / MAX_FRAME_RATE);
    let start = Instant::now();
    let mut last_frame: Option<Instant> = None;
    let mut command = OperatorCommand::released();
    let mut last_cmd: Option<(f64, [f64; 2])> = None;
    let mut latest = None;

    loop {
        // commands take effect at the next step boundary
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Cmd { t, pos, engage }) if t.is_finite() && pos.iter().all(|p| p.is_finite()) => {
                        let velocity = match last_cmd {
                            Some((t0, p0)) if t > t0 => Vector3::new((pos[0] - p0[0]) / (t - t0), (pos[1] - p0[1]) / (t - t0), 0.0),
                            _ => Vector3::zeros(),
                        };
                        last_cmd = Some((t, pos));
                        command = OperatorCommand { pose: Vector3::new(pos[0], pos[1], 0.0), velocity, force: Vector3::zeros(), engaged: engage };
                    }
                    _ => return close(&mut ws, CloseCode::Protocol, "malformed message".into()),
                },
                Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                Err(e) => return Err(e),
            }
        }

        let due = (start.elapsed().as_secs_f64() * options.speed / dt).floor() as u64;
        let mut budget = MAX_STEPS_PER_POLL;
        while session.step_index < due && budget > 0 {
            budget -= 1;
            match session.step(&command) {
                Ok(frame) => latest = Some(frame),
                Err(e) => return close(&mut ws, CloseCode::Error, format!("runtime fault: {e}")),
            }
            for event in session.take_events() {
                send(&mut ws, &ServerMessage::Event(event))?;
            }
        }

        if last_frame.is_none_or(|t| t.elapsed() >= frame_interval) {
            if let Some(frame) = latest.take() {
                send(&mut ws, &ServerMessage::Frame(FrameMessage::from(&frame)))?;
                last_frame = Some(Instant::now());
            }
        }
    }
}
