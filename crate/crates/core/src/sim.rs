//! Controller and teleoperation stepped together on one simulated clock.
//!
//! The controller runs every tick (1 ms by default). Teleop runs at its own rate
//! from a phase accumulator: with 400 Hz over 1 kHz it fires on 2 ticks out of 5.
//! Its setpoints go straight into the in-process controller. Cockpit messages
//! are applied between ticks, so a trace of `(tick, message)` pairs replays to
//! the same state bit for bit.

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, Reply, Request};
use crate::error::{Error, Result};
use crate::kinematics::{JointVector, NUM_JOINTS};
use crate::model::RobotModel;
use crate::scene::{RobotBody, Scene};
use crate::teleop::protocol::{ClientMessage, Faults, StateSnapshot, WireCapsule, WirePose};
use crate::teleop::trace::TraceRecord;
use crate::teleop::{IkReport, InputSample, Teleop, TeleopConfig, TeleopEvent};
use crate::transmission::{actuators_to_joints, counts_to_actuators};

pub const DEFAULT_TELEOP_RATE_HZ: u32 = 400;

/// Resting configuration the simulator starts from: needle tip about 5 cm above
/// the upper chest, wrist bent clear of its singular straight pose, needle
/// retracted. Collision-free with a 1 cm margin in the default scene.
pub fn home_configuration() -> JointVector {
    JointVector::from_array([0.1, 0.15, -0.3, -0.6, 0.6, -0.7, 0.0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub controller: ControllerConfig,
    pub teleop: TeleopConfig,
    pub teleop_rate_hz: u32,
    pub home: JointVector,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            teleop: TeleopConfig::default(),
            teleop_rate_hz: DEFAULT_TELEOP_RATE_HZ,
            home: home_configuration(),
        }
    }
}

/// Outcome of one client message.
#[derive(Clone, Debug, PartialEq)]
pub enum Applied {
    Done,
    /// Lockstep advance requested; the host decides whether to honour it.
    Step(u64),
    Refused(String),
}

pub struct Simulator {
    model: RobotModel,
    scene: Scene,
    body: RobotBody,
    controller: Controller,
    teleop: Teleop,
    rate_per_tick: u64,
    ticks_per_second: u64,
    phase: u64,
    held: InputSample,
    pending: InputSample,
    last_ik: IkReport,
    events: Vec<TeleopEvent>,
    connection_lost: bool,
}

impl Simulator {
    pub fn new(model: RobotModel, scene: Scene, body: RobotBody, config: SimConfig) -> Result<Self> {
        let ticks_per_second = (1.0 / config.controller.dt).round() as u64;
        if (ticks_per_second as f64 * config.controller.dt - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("controller timestep must divide one second".into()));
        }
        let rate = u64::from(config.teleop_rate_hz);
        if rate == 0 || rate > ticks_per_second {
            return Err(Error::InvalidArgument(format!("teleop rate must lie in 1..={ticks_per_second} Hz")));
        }
        let guard = Some((scene.clone(), body.clone()));
        let teleop = Teleop::new(&model, guard, config.teleop.clone(), config.home)?;
        let mut controller = Controller::new(config.controller)?;
        let home_counts = teleop.setpoints_for(&config.home)?;
        controller.preset_positions(&home_counts);
        Ok(Self {
            model,
            scene,
            body,
            controller,
            teleop,
            rate_per_tick: rate,
            ticks_per_second,
            phase: 0,
            held: InputSample::default(),
            pending: InputSample::default(),
            last_ik: IkReport {
                converged: true,
                ..IkReport::default()
            },
            events: Vec::new(),
            connection_lost: false,
        })
    }

    /// Shipped robot, default scene, default configuration.
    pub fn biopsy_suite(config: SimConfig) -> Result<Self> {
        let (scene, body) = crate::model::default_scene();
        Self::new(RobotModel::biopsy_arm(), scene, body, config)
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn teleop(&self) -> &Teleop {
        &self.teleop
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn tick(&self) -> u64 {
        self.controller.tick()
    }

    pub fn teleop_rate_hz(&self) -> u32 {
        self.rate_per_tick as u32
    }

    fn armed(&self) -> bool {
        let s = self.controller.safety();
        s.enabled && !s.estop_latched
    }

    /// Joints reconstructed from the encoder positions of axes 1-7.
    pub fn measured_joints(&self) -> JointVector {
        let pos = self.controller.positions();
        let mut counts = [0i64; NUM_JOINTS];
        counts.copy_from_slice(&pos[..NUM_JOINTS]);
        actuators_to_joints(&self.model.mixing, &counts_to_actuators(&counts, &self.model.encoder))
    }

    pub fn apply(&mut self, message: &ClientMessage) -> Applied {
        match *message {
            ClientMessage::Input {
                v,
                r,
                gamma_up,
                gamma_down,
                needle_jog,
            } => {
                self.held.v = v;
                self.held.r = r;
                self.pending.gamma_up |= gamma_up;
                self.pending.gamma_down |= gamma_down;
                if needle_jog != 0 {
                    self.pending.needle_jog = needle_jog;
                }
                Applied::Done
            }
            ClientMessage::Jog { direction } => {
                if !self.armed() {
                    return Applied::Refused("jog ignored while the controller is disabled".into());
                }
                self.events.extend(self.teleop.jog(i32::from(direction)));
                Applied::Done
            }
            ClientMessage::Gamma { direction } => {
                self.events.extend(self.teleop.adjust_gamma(i32::from(direction)));
                Applied::Done
            }
            ClientMessage::Enable => {
                self.controller.handle(&Request::Enable);
                let q = self.measured_joints();
                self.connection_lost = false;
                match self.teleop.resync(&q) {
                    Ok(()) => Applied::Done,
                    Err(e) => Applied::Refused(e.to_string()),
                }
            }
            ClientMessage::Disable => {
                self.controller.handle(&Request::Disable);
                Applied::Done
            }
            ClientMessage::Estop => {
                self.controller.handle(&Request::Estop);
                self.held = InputSample::default();
                self.pending = InputSample::default();
                Applied::Done
            }
            ClientMessage::Step { ticks } => Applied::Step(ticks),
        }
    }

    /// Applies a controller protocol request from a TCP client.
    pub fn handle_request(&mut self, request: &Request) -> Reply {
        let reply = self.controller.handle(request);
        if matches!(request, Request::Enable) {
            let q = self.measured_joints();
            let _ = self.teleop.resync(&q);
        }
        reply
    }

    /// One control period: a teleop tick when one is due, then the controller.
    pub fn step(&mut self) {
        self.phase += self.rate_per_tick;
        if self.phase >= self.ticks_per_second {
            self.phase -= self.ticks_per_second;
            if self.armed() {
                self.teleop_tick();
            }
        }
        self.controller.control_tick();
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    fn teleop_tick(&mut self) {
        let input = InputSample {
            v: self.held.v,
            r: self.held.r,
            ..self.pending
        };
        self.pending = InputSample::default();
        match self.teleop.tick(&input, &mut self.controller) {
            Ok(report) => {
                self.last_ik = report.ik;
                self.events.extend(report.events);
                self.connection_lost = false;
            }
            Err(Error::ConnectionLost(_)) => self.connection_lost = true,
            Err(e) => self.events.push(TeleopEvent::Fault { message: e.to_string() }),
        }
    }

    /// Telemetry snapshot; drains the events gathered since the last one.
    pub fn snapshot(&mut self) -> StateSnapshot {
        let mut snap = self.peek_snapshot();
        snap.events = std::mem::take(&mut self.events);
        snap
    }

    /// Telemetry snapshot that leaves pending events in place.
    pub fn peek_snapshot(&self) -> StateSnapshot {
        let chain = &self.model.chain;
        let q_measured = self.measured_joints();
        let frames = chain.frames_unchecked(&q_measured);
        let mount = &self.scene.mount;
        let world: Vec<_> = frames.iter().map(|f| mount * f).collect();
        let links = self
            .body
            .posed(&frames, mount)
            .iter()
            .zip(&self.body.links)
            .map(|(c, l)| WireCapsule::new(&l.name, c))
            .collect();
        let state = self.teleop.state();
        let safety = self.controller.safety();
        let status = self.controller.status();
        StateSnapshot {
            tick: self.controller.tick(),
            time: self.controller.time(),
            q: state.q.to_array(),
            q_measured: q_measured.to_array(),
            tip: WirePose::from(&world[NUM_JOINTS]),
            target: WirePose::from(&(mount * &state.target)),
            frames: world.iter().map(WirePose::from).collect(),
            links,
            gamma: state.gamma,
            needle_extension: state.needle_extension(),
            ik: self.last_ik,
            setpoints: status.setpoints,
            positions: status.positions,
            faults: Faults {
                estop: safety.estop_latched,
                watchdog: safety.watchdog_tripped,
                disabled: !safety.enabled,
                connection_lost: self.connection_lost,
            },
            events: self.events.clone(),
        }
    }

    /// Replays a recorded cockpit trace: each message is applied once the clock
    /// reaches its tick; a `step` advances the clock by its tick count.
    pub fn replay(&mut self, trace: &[TraceRecord<ClientMessage>]) -> Result<()> {
        for rec in trace {
            if rec.tick < self.tick() {
                return Err(Error::Protocol(format!(
                    "trace tick {} is behind the simulator at {}",
                    rec.tick,
                    self.tick()
                )));
            }
            self.run(rec.tick - self.tick());
            if let Applied::Step(n) = self.apply(&rec.message) {
                self.run(n);
            }
        }
        Ok(())
    }
}
