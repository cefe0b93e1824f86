use std::fs;
use std::path::{Path, PathBuf};

use ctbot_core::teleop::protocol::ClientMessage;
use serde_json::Value;

fn protocol_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../protocol")
}

fn fixtures(kind: &str) -> Vec<(String, String)> {
    let mut out: Vec<_> = fs::read_dir(protocol_dir().join("fixtures").join(kind))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no {kind} fixtures");
    out
}

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(&fs::read_to_string(protocol_dir().join("client_message.schema.json")).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn valid_fixtures_pass_schema_and_decoder_byte_for_byte() {
    let v = validator();
    let mut kinds = std::collections::BTreeSet::new();
    for (name, text) in fixtures("client") {
        let json: Value = serde_json::from_str(&text).unwrap();
        assert!(v.is_valid(&json), "{name} fails the schema");
        let msg = ClientMessage::decode(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(serde_json::to_string(&msg).unwrap(), text.trim_end(), "{name} is not canonical");
        kinds.insert(json["type"].as_str().unwrap().to_string());
    }
    let expected = ["disable", "enable", "estop", "gamma", "input", "jog", "step"];
    assert_eq!(kinds.into_iter().collect::<Vec<_>>(), expected);
}

#[test]
fn invalid_fixtures_fail_schema_and_decoder() {
    let v = validator();
    for (name, text) in fixtures("invalid") {
        let json: Value = serde_json::from_str(&text).unwrap();
        assert!(!v.is_valid(&json), "{name} passes the schema");
        assert!(ClientMessage::decode(&text).is_err(), "{name} passes the decoder");
    }
}

#[test]
fn every_encoded_message_passes_the_schema() {
    let v = validator();
    let samples = [
        ClientMessage::Input {
            v: [0.25, -1.0, 0.0],
            r: [0.0, 0.5, 1.0],
            gamma_up: false,
            gamma_down: true,
            needle_jog: 1,
        },
        ClientMessage::Jog { direction: -1 },
        ClientMessage::Gamma { direction: 1 },
        ClientMessage::Enable,
        ClientMessage::Disable,
        ClientMessage::Estop,
        ClientMessage::Step { ticks: 0 },
    ];
    for m in samples {
        let json = serde_json::to_value(&m).unwrap();
        assert!(v.is_valid(&json), "{json}");
    }
}
