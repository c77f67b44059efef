use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use microteleop_io::protocol::{ClientMessage, ServerMessage, PROTOCOL_VERSION};
use microteleop_io::server::{serve, ServerOptions};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(speed: f64) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || serve(listener, ServerOptions { speed, ..ServerOptions::default() }));
    format!("ws://{addr}")
}

fn send(ws: &mut Client, msg: &ClientMessage) {
    ws.send(Message::text(serde_json::to_string(msg).unwrap())).unwrap();
}

fn hello(url: &str, scenario: &str) -> Client {
    let (mut ws, _) = connect(url).unwrap();
    send(&mut ws, &ClientMessage::Hello { proto: PROTOCOL_VERSION, scenario: scenario.into() });
    match next(&mut ws) {
        Some(ServerMessage::Hello { proto, scenario: s }) => {
            assert_eq!(proto, 1);
            assert_eq!(s, scenario);
        }
        other => panic!("{other:?}"),
    }
    ws
}

fn next(ws: &mut Client) -> Option<ServerMessage> {
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

fn close_reason(ws: &mut Client) -> String {
    loop {
        match ws.read() {
            Ok(Message::Close(Some(frame))) => return frame.reason.to_string(),
            Ok(Message::Close(None)) | Err(_) => return String::new(),
            Ok(_) => {}
        }
    }
}

#[test]
fn frames_arrive_at_most_sixty_per_second() {
    let url = start(1.0);
    let mut ws = hello(&url, "bead_push");
    let t0 = Instant::now();
    let mut frames = Vec::new();
    while t0.elapsed() < Duration::from_secs(1) {
        if let Some(ServerMessage::Frame(f)) = next(&mut ws) {
            frames.push(f);
        }
    }
    assert!(frames.len() <= 62 && frames.len() >= 20, "{}", frames.len());
    assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
}

#[test]
fn version_mismatch_closes_with_reason() {
    let url = start(1.0);
    let (mut ws, _) = connect(&url).unwrap();
    send(&mut ws, &ClientMessage::Hello { proto: 2, scenario: "bead_push".into() });
    assert!(close_reason(&mut ws).contains("protocol version 2"));

    let (mut ws, _) = connect(&url).unwrap();
    send(&mut ws, &ClientMessage::Hello { proto: 1, scenario: "juggling".into() });
    assert!(close_reason(&mut ws).contains("unknown scenario"));

    let (mut ws, _) = connect(&url).unwrap();
    send(&mut ws, &ClientMessage::Cmd { t: 0.0, pos: [0.0, 0.0], engage: true });
    assert!(close_reason(&mut ws).contains("hello"));
}

#[test]
fn commands_steer_the_slave_and_contact_raises_events() {
    let url = start(10.0);
    let mut ws = hello(&url, "bubble_manipulation");
    let t0 = Instant::now();
    let mut contact_event = false;
    let mut contact_flag = false;
    let mut last_y = 0.0;
    let mut k = 0;
    while t0.elapsed() < Duration::from_secs(6) && !(contact_event && contact_flag) {
        // walk the hand towards the bubble at 10 mm per simulated second
        let t = t0.elapsed().as_secs_f64() * 10.0;
        send(&mut ws, &ClientMessage::Cmd { t, pos: [0.0, (0.01 * t).min(0.1)], engage: true });
        k += 1;
        match next(&mut ws) {
            Some(ServerMessage::Frame(f)) => {
                contact_flag |= f.flags.contact;
                last_y = f.slave.d[1];
            }
            Some(ServerMessage::Event(e)) => contact_event |= matches!(e.kind, microteleop_core::teleop::EventKind::ContactStart { .. }),
            other => panic!("{other:?}"),
        }
    }
    assert!(k > 0);
    assert!(last_y > 2e-5, "{last_y}");
    assert!(contact_event && contact_flag);
}

#[test]
fn sessions_run_concurrently() {
    let url = start(1.0);
    let handles: Vec<_> = ["bead_push", "cell_penetration", "bubble_manipulation"]
        .into_iter()
        .map(|name| {
            let url = url.clone();
            thread::spawn(move || {
                let mut ws = hello(&url, name);
                let mut n = 0;
                while n < 5 {
                    if let Some(ServerMessage::Frame(_)) = next(&mut ws) {
                        n += 1;
                    }
                }
                ws.close(None).ok();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn malformed_command_closes_the_session() {
    let url = start(1.0);
    let mut ws = hello(&url, "bead_push");
    ws.send(Message::text("{\"type\":\"cmd\",\"t\":0}")).unwrap();
    assert!(close_reason(&mut ws).contains("malformed"));
}

#[test]
fn messages_match_the_wire_format() {
    let cmd: ClientMessage = serde_json::from_str(r#"{"type":"cmd","t":0.5,"pos":[0.01,-0.02],"engage":true}"#).unwrap();
    assert_eq!(cmd, ClientMessage::Cmd { t: 0.5, pos: [0.01, -0.02], engage: true });
    let hello = serde_json::to_value(ServerMessage::Hello { proto: 1, scenario: "bead_push".into() }).unwrap();
    assert_eq!(hello, serde_json::json!({"type": "hello", "proto": 1, "scenario": "bead_push"}));
    let url = start(1.0);
    let mut ws = hello_raw(&url);
    let frame = loop {
        if let Ok(Message::Text(t)) = ws.read() {
            let v: serde_json::Value = serde_json::from_str(&t).unwrap();
            if v["type"] == "frame" {
                break v;
            }
        }
    };
    assert!(frame["t"].is_number());
    assert_eq!(frame["slave"]["d"].as_array().unwrap().len(), 3);
    assert_eq!(frame["slave"]["v"].as_array().unwrap().len(), 3);
    assert_eq!(frame["force"].as_array().unwrap().len(), 2);
    assert!(frame["flags"]["saturation"].is_boolean());
}

fn hello_raw(url: &str) -> Client {
    let (mut ws, _) = connect(url).unwrap();
    ws.send(Message::text(r#"{"type":"hello","proto":1,"scenario":"bead_push"}"#)).unwrap();
    ws
}
