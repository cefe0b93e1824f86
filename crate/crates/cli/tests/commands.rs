//! The `ctbot` binary end to end: exit codes, printed formats and agreement with
//! oracles written here against the raw DH constants.

use std::io::Write;
use std::net::TcpListener;
use std::process::{Command, Output, Stdio};

use ctbot_core::kinematics::{DhRow, JointType, KinematicChain, NUM_JOINTS};
use ctbot_core::sim::{SimConfig, Simulator};
use ctbot_core::teleop::protocol::ClientMessage;
use ctbot_core::teleop::trace::{write_trace, TraceRecord};
use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn ctbot(args: &[&str]) -> Output {
    ctbot_with_stdin(args, "")
}

fn ctbot_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ctbot"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn link(row: &DhRow, q: f64) -> Matrix4<f64> {
    let (d, theta) = match row.joint_type {
        JointType::Prismatic => (row.d_offset + q, row.theta_offset),
        JointType::Revolute => (row.d_offset, row.theta_offset + q),
        JointType::Fixed => (row.d_offset, row.theta_offset),
    };
    let (ct, st) = (theta.cos(), theta.sin());
    let (ca, sa) = (row.alpha.cos(), row.alpha.sin());
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct,      -st,      0.0,  row.a,
        st * ca, ct * ca,  -sa,  -sa * d,
        st * sa, ct * sa,  ca,   ca * d,
        0.0,     0.0,      0.0,  1.0,
    );
    m
}

fn fk_oracle(q: &[f64; NUM_JOINTS], frame: usize) -> Matrix4<f64> {
    let chain = KinematicChain::biopsy_arm();
    chain.dh.rows[..frame]
        .iter()
        .enumerate()
        .fold(Matrix4::identity(), |acc, (i, row)| acc * link(row, if i < NUM_JOINTS { q[i] } else { 0.0 }))
}

fn fk_json(q: &[f64; NUM_JOINTS]) -> Value {
    let args: Vec<String> = q.iter().map(|v| v.to_string()).collect();
    let mut argv = vec!["fk", "--json"];
    argv.extend(args.iter().map(String::as_str));
    let o = ctbot(&argv);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(&o)).unwrap()
}

fn assert_pose_matches(json: &Value, m: &Matrix4<f64>, tol: f64) {
    for i in 0..3 {
        let p = json["position"][i].as_f64().unwrap();
        assert!((p - m[(i, 3)]).abs() < tol, "position {i}: {p} vs {}", m[(i, 3)]);
        for j in 0..3 {
            let r = json["rotation"][i][j].as_f64().unwrap();
            assert!((r - m[(i, j)]).abs() < tol, "rotation {i}{j}: {r} vs {}", m[(i, j)]);
        }
    }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&ctbot(&["--help"])), 0);
    assert_eq!(code(&ctbot(&["fk", "--help"])), 0);
    assert_eq!(code(&ctbot(&["--no-such-flag"])), 2);
    assert_eq!(code(&ctbot(&["fk", "0", "0", "0"])), 2);
    assert_eq!(code(&ctbot(&["fk", "--frame", "9", "0", "0", "0", "0", "0", "0", "0"])), 2);
    assert_eq!(code(&ctbot(&["launch"])), 2);
}

#[test]
fn fk_matches_the_oracle() {
    let zero = [0.0; NUM_JOINTS];
    assert_pose_matches(&fk_json(&zero), &fk_oracle(&zero, 8), 1e-12);

    let q = [0.1, 0.2, -0.5, 0.3, -1.0, 0.7, 0.05];
    assert_pose_matches(&fk_json(&q), &fk_oracle(&q, 8), 1e-12);

    let o = ctbot(&["fk", "--frame", "3", "--json", "0", "0", "0", "0", "0", "0", "0"]);
    assert_eq!(code(&o), 0);
    let json: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["frame"], 3);
    assert_pose_matches(&json, &fk_oracle(&zero, 3), 1e-12);

    let text = stdout(&ctbot(&["fk", "0", "0", "0", "0", "0", "0", "0"]));
    assert!(text.starts_with("frame     8\nposition  "), "{text}");
}

#[test]
fn fk_outside_the_limits_is_a_usage_error() {
    let o = ctbot(&["fk", "9", "0", "0", "0", "0", "0", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("limit"));
}

#[test]
fn ik_inverts_fk_output() {
    let limits = KinematicChain::biopsy_arm().limits;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..4 {
        // Stay off the range ends so the target is comfortably reachable.
        let q: [f64; NUM_JOINTS] =
            std::array::from_fn(|i| limits.lower[i] + (0.15 + 0.7 * rng.random::<f64>()) * (limits.upper[i] - limits.lower[i]));
        let target = fk_json(&q);
        let o = ctbot_with_stdin(&["ik", "--json"], &target.to_string());
        assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        let sol: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(sol["converged"], true);
        let qs: [f64; NUM_JOINTS] = std::array::from_fn(|i| sol["q"][i].as_f64().unwrap());
        for i in 0..NUM_JOINTS {
            assert!(qs[i] >= limits.lower[i] - 1e-12 && qs[i] <= limits.upper[i] + 1e-12);
        }
        let reached = fk_oracle(&qs, 8);
        for i in 0..3 {
            assert!((reached[(i, 3)] - target["position"][i].as_f64().unwrap()).abs() < 1e-4);
        }
    }
}

#[test]
fn ik_reads_printed_text_and_bare_numbers() {
    let q = ["0.15", "0.1", "0.4", "-0.2", "0.8", "-0.6", "0.03"];
    let mut argv = vec!["fk"];
    argv.extend(q);
    let printed = stdout(&ctbot(&argv));
    assert_eq!(code(&ctbot_with_stdin(&["ik"], &printed)), 0);

    let numbers: Vec<&str> = printed
        .lines()
        .filter(|l| !l.starts_with("frame"))
        .flat_map(|l| l.split_whitespace().skip(1))
        .collect();
    let mut argv = vec!["ik"];
    argv.extend(numbers);
    let o = ctbot(&argv);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("converged             true"));
}

#[test]
fn ik_failures() {
    assert_eq!(code(&ctbot_with_stdin(&["ik"], "not a pose")), 2);
    assert_eq!(code(&ctbot(&["ik", "0", "0", "0", "1", "0", "0", "0", "1", "0", "0", "0", "2"])), 2);

    // Five metres away: every attempt ends with a large residual.
    let o = ctbot(&["ik", "--restarts", "2", "5", "5", "5", "1", "0", "0", "0", "1", "0", "0", "0", "1"]);
    assert_eq!(code(&o), 1);
    let text = stdout(&o);
    assert!(text.contains("converged             false"), "{text}");
    assert!(text.contains("position residual"), "{text}");
}

#[test]
fn statics_torques() {
    let o = ctbot(&["statics"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("(1.28, 0.64, 0)"), "{}", stdout(&o));

    let json: Value = serde_json::from_str(&stdout(&ctbot(&["statics", "--json"]))).unwrap();
    // Needle thrust times the 16 cm and 8 cm wrist levers; the last yaw is on the needle axis.
    assert_eq!(json["torque_bounds"], serde_json::json!([8.0 * 0.16, 8.0 * 0.08, 0.0]));

    let json: Value = serde_json::from_str(&stdout(&ctbot(&["statics", "--json", "--force", "2"]))).unwrap();
    assert_eq!(json["torque_bounds"], serde_json::json!([2.0 * 0.16, 2.0 * 0.08, 0.0]));
}

#[test]
fn model_lists_the_encoder() {
    let o = ctbot(&["model"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("479"), "{}", stdout(&o));
    let json: Value = serde_json::from_str(&stdout(&ctbot(&["model", "--json"]))).unwrap();
    assert_eq!(json["dh"].as_array().unwrap().len(), 8);
}

#[test]
fn workspace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = ctbot(&["workspace", "--samples", "1000", "--seed", "7", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("x,y,z,count,percentage"));
    let (scene, _) = ctbot_core::model::default_scene();
    assert_eq!(lines.count(), scene.targets().len());
}

fn scripted_trace() -> Vec<TraceRecord<ClientMessage>> {
    let hold = ClientMessage::Input {
        v: [0.0, 1.0, 0.0],
        r: [0.0; 3],
        gamma_up: false,
        gamma_down: false,
        needle_jog: 0,
    };
    vec![
        TraceRecord { tick: 0, message: ClientMessage::Enable },
        TraceRecord { tick: 0, message: hold },
        TraceRecord { tick: 0, message: ClientMessage::Step { ticks: 500 } },
        TraceRecord { tick: 500, message: ClientMessage::Jog { direction: 1 } },
        TraceRecord { tick: 800, message: ClientMessage::Estop },
    ]
}

#[test]
fn replay_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.jsonl");
    let trace = scripted_trace();
    write_trace(&path, &trace).unwrap();

    let o = ctbot(&["replay", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();

    let mut cfg = SimConfig::default();
    cfg.teleop.collision_guard = true;
    let mut sim = Simulator::biopsy_suite(cfg).unwrap();
    sim.replay(&trace).unwrap();
    let expected = serde_json::to_value(sim.snapshot()).unwrap();
    assert_eq!(printed, expected);
    assert_eq!(printed["tick"], 800);
    assert_eq!(printed["faults"]["estop"], true);
}

#[test]
fn replay_rejects_bad_traces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"tick\":5,\"type\":\"enable\"}\n{\"tick\":2,\"type\":\"estop\"}\n").unwrap();
    assert_eq!(code(&ctbot(&["replay", path.to_str().unwrap()])), 2);
    assert_eq!(code(&ctbot(&["replay", "/nonexistent/trace.jsonl"])), 1);
}

#[test]
fn configuration_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ctbot.toml");
    std::fs::write(&cfg, "[controller]\nwarp = 9\n").unwrap();
    let o = ctbot(&["--config", cfg.to_str().unwrap(), "statics"]);
    assert_eq!(code(&o), 2);

    assert_eq!(code(&ctbot(&["--model", "/nonexistent/model.toml", "model"])), 2);
    assert_eq!(code(&ctbot(&["serve", "--fast", "--heatmap", "/nonexistent/heat.csv"])), 2);
}

#[test]
fn busy_port_is_a_runtime_error() {
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let o = ctbot(&["serve", "--fast", "--bind", "127.0.0.1", "--port", &port, "--cockpit-port", "0"]);
    assert_eq!(code(&o), 1);
}
