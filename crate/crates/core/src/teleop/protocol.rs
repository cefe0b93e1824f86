//! Cockpit WebSocket protocol. Every frame is one JSON text message tagged by
//! `"type"`. All poses and points are in the bore frame, metres; rotations are
//! row-major 3x3 arrays.
//!
//! Client to server:
//!
//! ```text
//! {"type":"input","v":[x,y,z],"r":[roll,pitch,yaw],"gamma_up":false,"gamma_down":false,"needle_jog":0}
//! {"type":"jog","direction":1}          needle advance (+1) or retract (-1) by one step
//! {"type":"gamma","direction":-1}       scale gamma up (+1) or down (-1)
//! {"type":"enable"} | {"type":"disable"} | {"type":"estop"}
//! {"type":"step","ticks":100}           lockstep servers only
//! ```
//!
//! Omitted `input` fields default to zero/false. Axis values are clamped to
//! [-1, 1]. The latest `input` wins and is held until replaced; button flags and
//! `needle_jog` inside an `input` act once.
//!
//! Server to client: one `hello` on connect, then `state` snapshots, and `error`
//! for rejected messages.

use serde::{Deserialize, Serialize};

use super::{IkReport, InputSample, TeleopEvent};
use crate::controller::NUM_AXES;
use crate::kinematics::{Pose, NUM_JOINTS};
use crate::scene::{Capsule, Scene};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Input {
        #[serde(default)]
        v: [f64; 3],
        #[serde(default)]
        r: [f64; 3],
        #[serde(default)]
        gamma_up: bool,
        #[serde(default)]
        gamma_down: bool,
        #[serde(default)]
        needle_jog: i8,
    },
    Jog { direction: i8 },
    Gamma { direction: i8 },
    Enable,
    Disable,
    Estop,
    Step { ticks: u64 },
}

impl ClientMessage {
    pub fn from_sample(s: &InputSample) -> Self {
        ClientMessage::Input {
            v: s.v,
            r: s.r,
            gamma_up: s.gamma_up,
            gamma_down: s.gamma_down,
            needle_jog: s.needle_jog,
        }
    }

    pub fn decode(text: &str) -> Result<Self, String> {
        let raw: serde_json::Value = serde_json::from_str(text.trim()).map_err(|e| format!("malformed message: {e}"))?;
        let msg: Self = serde_json::from_value(raw.clone()).map_err(|e| format!("malformed message: {e}"))?;
        // Serde's deny_unknown_fields does not reach unit variants of a tagged enum;
        // the encoded form names every field a message may carry.
        let known = serde_json::to_value(&msg).expect("client messages always serialize");
        if let (Some(given), Some(known)) = (raw.as_object(), known.as_object()) {
            if let Some(extra) = given.keys().find(|k| !known.contains_key(*k)) {
                return Err(format!("malformed message: unknown field `{extra}`"));
            }
        }
        match &msg {
            ClientMessage::Input { needle_jog, .. } if !(-1..=1).contains(needle_jog) => {
                Err("needle_jog must be -1, 0 or 1".into())
            }
            ClientMessage::Jog { direction } | ClientMessage::Gamma { direction } if !matches!(direction, -1 | 1) => {
                Err("direction must be -1 or 1".into())
            }
            _ => Ok(msg),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        let r = &p.rotation;
        Self {
            position: p.position.into(),
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireCapsule {
    pub name: String,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl WireCapsule {
    pub fn new(name: &str, c: &Capsule) -> Self {
        Self {
            name: name.to_string(),
            a: c.a.into(),
            b: c.b.into(),
            radius: c.radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireBore {
    pub inner_radius: f64,
    pub length: f64,
}

/// Static scene geometry for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireScene {
    pub bore: Option<WireBore>,
    pub patient: Vec<WireCapsule>,
    pub table: Option<WireBox>,
    pub lung_region: Option<WireBox>,
    /// Robot base frame in the bore frame.
    pub mount: WirePose,
}

impl From<&Scene> for WireScene {
    fn from(s: &Scene) -> Self {
        let wire_box = |b: &crate::scene::Aabb| WireBox {
            min: b.min.into(),
            max: b.max.into(),
        };
        Self {
            bore: s.bore.map(|b| WireBore {
                inner_radius: b.inner_radius,
                length: b.length,
            }),
            patient: s.patient.iter().map(|p| WireCapsule::new(&p.name, &p.capsule)).collect(),
            table: s.table.as_ref().map(wire_box),
            lung_region: s.lung_region.as_ref().map(wire_box),
            mount: WirePose::from(&s.mount),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub dt: f64,
    pub teleop_rate_hz: f64,
    /// "realtime" or "lockstep".
    pub mode: String,
    pub scene: WireScene,
    /// Where the heat-map CSV is served, when one was given.
    pub heatmap_url: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Faults {
    pub estop: bool,
    pub watchdog: bool,
    pub disabled: bool,
    pub connection_lost: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub time: f64,
    /// Commanded joints (teleop solution).
    pub q: [f64; NUM_JOINTS],
    /// Joints reconstructed from the encoder counts.
    pub q_measured: [f64; NUM_JOINTS],
    /// Needle tip at the measured joints.
    pub tip: WirePose,
    pub target: WirePose,
    /// DH frames 1..8 at the measured joints.
    pub frames: Vec<WirePose>,
    /// Robot link capsules at the measured joints.
    pub links: Vec<WireCapsule>,
    pub gamma: f64,
    pub needle_extension: f64,
    pub ik: IkReport,
    pub setpoints: [i64; NUM_AXES],
    pub positions: [i64; NUM_AXES],
    pub faults: Faults,
    /// Teleop events since the previous snapshot.
    pub events: Vec<TeleopEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    State(Box<StateSnapshot>),
    Error { message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
