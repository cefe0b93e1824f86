//! A served session driven over real sockets: WebSocket cockpit, HTTP static
//! files and the setpoint port. The lockstep session is checked against an
//! offline replay of the same script.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use ctbot_core::controller::server::ControllerClient;
use ctbot_core::controller::{Reply, Request};
use ctbot_core::sim::{SimConfig, Simulator};
use ctbot_core::teleop::protocol::{ClientMessage, ServerMessage, StateSnapshot};
use ctbot_core::teleop::trace::{read_trace, TraceRecord};
use serde_json::Value;
use tungstenite::{Message, WebSocket};

struct Server {
    child: Child,
    controller: SocketAddr,
    cockpit: SocketAddr,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(extra: &[&str]) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ctbot"))
        .args(["serve", "--bind", "127.0.0.1", "--port", "0", "--cockpit-port", "0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut addr = |prefix: &str| -> SocketAddr {
        let line = lines.next().expect("server printed its address").unwrap();
        let rest = line.strip_prefix(prefix).unwrap_or_else(|| panic!("unexpected line {line:?}"));
        rest.trim_start_matches("http://").trim_end_matches('/').parse().unwrap()
    };
    let controller = addr("controller listening on ");
    let cockpit = addr("cockpit listening on ");
    Server { child, controller, cockpit }
}

type Socket = WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>;

fn connect(addr: SocketAddr) -> Socket {
    let (ws, _) = tungstenite::connect(format!("ws://{addr}/ws")).unwrap();
    if let tungstenite::stream::MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    }
    ws
}

fn send(ws: &mut Socket, m: &ClientMessage) {
    ws.send(Message::text(serde_json::to_string(m).unwrap())).unwrap();
}

fn recv(ws: &mut Socket) -> ServerMessage {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("unexpected frame {other:?}"),
        }
    }
}

fn recv_state(ws: &mut Socket) -> StateSnapshot {
    match recv(ws) {
        ServerMessage::State(s) => *s,
        other => panic!("expected state, got {other:?}"),
    }
}

fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn without_events(s: &StateSnapshot) -> Value {
    let mut v = serde_json::to_value(s).unwrap();
    v.as_object_mut().unwrap().remove("events");
    v
}

fn close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9, "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (x, y)) in x.iter().zip(y).enumerate() {
                close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

fn script() -> Vec<(u64, ClientMessage)> {
    let hold_x = ClientMessage::Input {
        v: [1.0, 0.0, 0.0],
        r: [0.0; 3],
        gamma_up: false,
        gamma_down: false,
        needle_jog: 0,
    };
    let mut s = vec![
        (0, ClientMessage::Enable),
        (0, hold_x),
        (0, ClientMessage::Step { ticks: 2000 }),
    ];
    s.extend((0..5).map(|_| (2000, ClientMessage::Jog { direction: 1 })));
    s.push((2000, ClientMessage::Step { ticks: 100 }));
    s.push((2100, ClientMessage::Estop));
    s.push((2100, ClientMessage::Step { ticks: 10 }));
    s
}

#[test]
fn lockstep_session_matches_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("session.jsonl");
    let heatmap = dir.path().join("heat.csv");
    std::fs::write(&heatmap, "x,y,z,count,percentage\n0.1,0.2,0.3,4,0.004\n").unwrap();
    let site = dir.path().join("site");
    std::fs::create_dir(&site).unwrap();
    std::fs::write(site.join("index.html"), "<title>cockpit</title>").unwrap();
    std::fs::write(dir.path().join("secret.txt"), "nope").unwrap();

    let server = serve(&[
        "--fast",
        "--trace",
        trace_path.to_str().unwrap(),
        "--heatmap",
        heatmap.to_str().unwrap(),
        "--cockpit-dir",
        site.to_str().unwrap(),
    ]);

    let mut ws = connect(server.cockpit);
    match recv(&mut ws) {
        ServerMessage::Hello(h) => {
            assert_eq!(h.mode, "lockstep");
            assert_eq!(h.heatmap_url.as_deref(), Some("/heatmap.csv"));
            assert_eq!(h.dt, 1e-3);
            assert_eq!(h.teleop_rate_hz, 400.0);
        }
        other => panic!("expected hello, got {other:?}"),
    }
    assert_eq!(recv_state(&mut ws).tick, 0);

    let script = script();
    let mut last = None;
    for (_, m) in &script {
        send(&mut ws, m);
        if let ClientMessage::Step { .. } = m {
            last = Some(recv_state(&mut ws));
        }
    }
    let served = last.unwrap();
    assert_eq!(served.tick, 2110);
    assert!(served.faults.estop);
    let home = ctbot_core::sim::home_configuration().to_array();
    assert!(served.q[0] - home[0] > 1e-3, "holding +x moved nothing: {:?}", served.q);
    assert!(served.q[6] > 0.0, "jogs did not advance the needle");

    // Malformed input is answered with an error and changes nothing.
    ws.send(Message::text(r#"{"type":"jog","direction":2}"#)).unwrap();
    assert!(matches!(recv(&mut ws), ServerMessage::Error { .. }));

    let trace: Vec<TraceRecord<ClientMessage>> =
        script.iter().map(|(tick, message)| TraceRecord { tick: *tick, message: message.clone() }).collect();
    let mut cfg = SimConfig::default();
    cfg.teleop.collision_guard = true;
    let mut offline = Simulator::biopsy_suite(cfg).unwrap();
    offline.replay(&trace).unwrap();
    close(&without_events(&served), &without_events(&offline.snapshot()), "state");

    assert_eq!(read_trace::<ClientMessage>(&trace_path).unwrap(), trace);

    let mut client = ControllerClient::connect(server.controller).unwrap();
    match client.request(&Request::Status).unwrap() {
        Reply::Status(s) => assert_eq!(s.setpoints, served.setpoints),
        other => panic!("expected status, got {other:?}"),
    }
    match client.request(&Request::Step { ticks: 5 }).unwrap() {
        Reply::Status(_) => {}
        other => panic!("expected status, got {other:?}"),
    }
    assert_eq!(recv_state(&mut ws).tick, 2115);

    assert_eq!(http_get(server.cockpit, "/heatmap.csv"), (200, std::fs::read_to_string(&heatmap).unwrap()));
    assert_eq!(http_get(server.cockpit, "/"), (200, "<title>cockpit</title>".to_string()));
    assert_eq!(http_get(server.cockpit, "/missing.js").0, 404);
    assert_eq!(http_get(server.cockpit, "/../secret.txt").0, 400);
}

#[test]
fn realtime_session_streams_state() {
    let server = serve(&["--realtime", "--state-every", "20"]);
    let mut ws = connect(server.cockpit);
    match recv(&mut ws) {
        ServerMessage::Hello(h) => {
            assert_eq!(h.mode, "realtime");
            assert_eq!(h.heatmap_url, None);
        }
        other => panic!("expected hello, got {other:?}"),
    }
    let first = recv_state(&mut ws).tick;
    let mut ticks = vec![first];
    let deadline = Instant::now() + Duration::from_secs(10);
    while ticks.len() < 4 && Instant::now() < deadline {
        ticks.push(recv_state(&mut ws).tick);
    }
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "{ticks:?}");

    send(&mut ws, &ClientMessage::Step { ticks: 10 });
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        assert!(Instant::now() < deadline, "no error for step");
        if let ServerMessage::Error { message } = recv(&mut ws) {
            assert!(message.contains("lockstep"), "{message}");
            break;
        }
    }

    let (status, body) = http_get(server.cockpit, "/");
    assert_eq!(status, 200);
    assert!(!body.is_empty());
    assert_eq!(http_get(server.cockpit, "/heatmap.csv").0, 404);
}
