//! Emulated 8-axis motor controller: a PID position loop per axis closed over a
//! first-order DC motor model, stepped on a fixed simulated clock.
//!
//! Positions and setpoints are motor encoder counts. Axes 1-7 drive actuators
//! m1..m7; axis 8 is a spare channel.

pub mod protocol;
pub mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointVector, NUM_JOINTS};
use crate::model::RobotModel;
use crate::transmission::joints_to_actuators;
pub use protocol::{AxisRejection, LoopStats, Reply, Request, StatusReport};

pub const NUM_AXES: usize = 8;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_WATCHDOG_TIMEOUT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Duty magnitude cap, at most 1.
    pub output_limit: f64,
    /// Cap on the integral accumulator (count seconds).
    pub integral_limit: f64,
}

impl Default for PidGains {
    /// Tuned for [`MotorModel::default`]: a 1000-count step settles inside two
    /// counts in about 30 ms with under one percent overshoot.
    fn default() -> Self {
        Self {
            kp: 5e-3,
            ki: 1e-3,
            kd: 2.7e-5,
            output_limit: 1.0,
            integral_limit: 5.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.kp, self.ki, self.kd, self.output_limit, self.integral_limit]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(Error::InvalidArgument("PID gains must be finite and non-negative".into()));
        }
        if !(self.output_limit > 0.0 && self.output_limit <= 1.0) {
            return Err(Error::InvalidArgument("output limit must lie in (0, 1]".into()));
        }
        if !(self.integral_limit > 0.0) {
            return Err(Error::InvalidArgument("integral limit must be positive".into()));
        }
        Ok(())
    }
}

/// Motor plus gearbox seen from the encoder: `v' = (K duty - v) / T_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    /// Steady-state speed at full duty, counts/s.
    pub gain: f64,
    pub time_constant: f64,
}

impl Default for MotorModel {
    /// 10900 rpm free speed read through a 2000-count encoder, 20 ms time constant.
    fn default() -> Self {
        Self {
            gain: 10900.0 / 60.0 * 2000.0,
            time_constant: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    /// `None` until the first step after a reset, which suppresses derivative kick.
    pub last_error: Option<f64>,
}

/// Positional PID with derivative on error. Returns the clamped duty.
pub fn pid_step(gains: &PidGains, state: &mut PidState, setpoint: i64, measured: i64, dt: f64) -> f64 {
    let error = (setpoint - measured) as f64;
    state.integral = (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = state.last_error.map_or(0.0, |last| (error - last) / dt);
    state.last_error = Some(error);
    let u = gains.kp * error + gains.ki * state.integral + gains.kd * derivative;
    u.clamp(-gains.output_limit, gains.output_limit)
}

/// Semi-implicit Euler step: velocity first, then position with the new velocity.
pub fn plant_step(model: &MotorModel, position: &mut f64, velocity: &mut f64, duty: f64, dt: f64) {
    *velocity += dt * (model.gain * duty - *velocity) / model.time_constant;
    *position += *velocity * dt;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisConfig {
    pub gains: PidGains,
    pub motor: MotorModel,
    pub min_setpoint: i64,
    pub max_setpoint: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub dt: f64,
    pub watchdog_timeout: f64,
    pub axes: [AxisConfig; NUM_AXES],
}

impl ControllerConfig {
    /// Shipped gains and motor on every axis. Setpoints for axes 1-7 are bounded by
    /// the actuator box spanned by the joint limits; the spare axis takes the
    /// full register range.
    pub fn for_model(model: &RobotModel) -> Result<Self> {
        let per_rev = model.encoder.counts_per_output_rev();
        let (reg_lo, reg_hi) = model.encoder.count_range();
        let limits = &model.chain.limits;
        let mut lo = [0.0; NUM_JOINTS];
        let mut hi = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let mut e = JointVector::zeros();
            e[j] = 1.0;
            let column = joints_to_actuators(&model.mixing, &e)?;
            for i in 0..NUM_JOINTS {
                let (a, b) = (column.0[i] * limits.lower[j], column.0[i] * limits.upper[j]);
                lo[i] += a.min(b);
                hi[i] += a.max(b);
            }
        }
        let base = AxisConfig {
            gains: PidGains::default(),
            motor: MotorModel::default(),
            min_setpoint: reg_lo,
            max_setpoint: reg_hi,
        };
        let mut axes = [base; NUM_AXES];
        for i in 0..NUM_JOINTS {
            axes[i].min_setpoint = ((lo[i] * per_rev).floor() as i64).max(reg_lo);
            axes[i].max_setpoint = ((hi[i] * per_rev).ceil() as i64).min(reg_hi);
        }
        Ok(Self {
            dt: DEFAULT_DT,
            watchdog_timeout: DEFAULT_WATCHDOG_TIMEOUT,
            axes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument("timestep must be positive".into()));
        }
        if !(self.watchdog_timeout.is_finite() && self.watchdog_timeout > 0.0) {
            return Err(Error::InvalidArgument("watchdog timeout must be positive".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            a.gains.validate()?;
            if !(a.motor.gain.is_finite() && a.motor.time_constant > 0.0) {
                return Err(Error::InvalidArgument(format!("axis {} motor model is invalid", i + 1)));
            }
            if a.min_setpoint > a.max_setpoint {
                return Err(Error::InvalidArgument(format!("axis {} setpoint range is empty", i + 1)));
            }
        }
        Ok(())
    }

    /// Whole ticks of silence tolerated before the watchdog trips.
    pub fn watchdog_ticks(&self) -> u64 {
        (self.watchdog_timeout / self.dt).round() as u64
    }
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::for_model(&RobotModel::biopsy_arm()).expect("shipped model yields a controller config")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisState {
    /// Continuous shaft position in counts; the encoder reports it rounded.
    pub position: f64,
    pub velocity: f64,
    pub pid: PidState,
    pub setpoint: i64,
    pub command: f64,
}

impl AxisState {
    pub fn measured(&self) -> i64 {
        self.position.round() as i64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyState {
    pub enabled: bool,
    pub estop_latched: bool,
    pub watchdog_tripped: bool,
    /// Tick of the last accepted setpoint message or enable.
    pub last_feed_tick: u64,
}

/// All axis and safety state. Every mutation happens through [`Controller::handle`]
/// between ticks or inside [`Controller::control_tick`].
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    config: ControllerConfig,
    axes: [AxisState; NUM_AXES],
    safety: SafetyState,
    tick: u64,
    stats: LoopStats,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            axes: [AxisState::default(); NUM_AXES],
            safety: SafetyState::default(),
            tick: 0,
            stats: LoopStats::default(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn axes(&self) -> &[AxisState; NUM_AXES] {
        &self.axes
    }

    pub fn safety(&self) -> &SafetyState {
        &self.safety
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn positions(&self) -> [i64; NUM_AXES] {
        self.axes.map(|a| a.measured())
    }

    pub fn commands(&self) -> [f64; NUM_AXES] {
        self.axes.map(|a| a.command)
    }

    /// Homing: the encoders read `counts` and every axis holds there.
    pub fn preset_positions(&mut self, counts: &[i64; NUM_AXES]) {
        for (axis, &c) in self.axes.iter_mut().zip(counts) {
            axis.position = c as f64;
            axis.velocity = 0.0;
            axis.setpoint = c;
        }
    }

    pub fn stats_mut(&mut self) -> &mut LoopStats {
        &mut self.stats
    }

    /// Applies one protocol request. `Step` belongs to the host loop and is
    /// answered with an error here.
    pub fn handle(&mut self, request: &Request) -> Reply {
        match request {
            Request::SetSetpoints { setpoints } => self.set_setpoints(setpoints),
            Request::Enable => {
                self.safety.enabled = true;
                self.safety.estop_latched = false;
                self.safety.watchdog_tripped = false;
                self.safety.last_feed_tick = self.tick;
                Reply::Ok
            }
            Request::Disable => {
                self.shut_down();
                Reply::Ok
            }
            Request::Estop => {
                self.safety.estop_latched = true;
                self.shut_down();
                Reply::Ok
            }
            Request::Status => Reply::Status(self.status()),
            Request::Step { .. } => Reply::Error {
                message: "step is only accepted by a lockstep host".into(),
            },
        }
    }

    fn set_setpoints(&mut self, setpoints: &[i64; NUM_AXES]) -> Reply {
        let rejected: Vec<AxisRejection> = setpoints
            .iter()
            .zip(&self.config.axes)
            .enumerate()
            .filter(|(_, (&s, a))| s < a.min_setpoint || s > a.max_setpoint)
            .map(|(i, (&s, a))| AxisRejection {
                axis: i + 1,
                value: s,
                min: a.min_setpoint,
                max: a.max_setpoint,
                reason: format!("setpoint {s} outside [{}, {}]", a.min_setpoint, a.max_setpoint),
            })
            .collect();
        if !rejected.is_empty() {
            return Reply::Rejected { axes: rejected };
        }
        for (axis, &s) in self.axes.iter_mut().zip(setpoints) {
            axis.setpoint = s;
        }
        self.safety.last_feed_tick = self.tick;
        Reply::Ok
    }

    /// Zeroes commands, resets the PID memories and holds the current position.
    fn shut_down(&mut self) {
        self.safety.enabled = false;
        for axis in &mut self.axes {
            axis.command = 0.0;
            axis.pid = PidState::default();
            axis.setpoint = axis.measured();
        }
    }

    fn watchdog_expired(&self) -> bool {
        self.tick.saturating_sub(self.safety.last_feed_tick) > self.config.watchdog_ticks()
    }

    /// One fixed-timestep loop iteration: safety checks, PID on every axis, then
    /// the plant advances by `dt`. Returns the duty commands applied this tick.
    pub fn control_tick(&mut self) -> [f64; NUM_AXES] {
        if self.safety.enabled && self.watchdog_expired() {
            self.safety.watchdog_tripped = true;
            self.shut_down();
        }
        let dt = self.config.dt;
        let active = self.safety.enabled && !self.safety.estop_latched;
        for (axis, cfg) in self.axes.iter_mut().zip(&self.config.axes) {
            let measured = axis.measured();
            axis.command = if active {
                pid_step(&cfg.gains, &mut axis.pid, axis.setpoint, measured, dt)
            } else {
                0.0
            };
            plant_step(&cfg.motor, &mut axis.position, &mut axis.velocity, axis.command, dt);
        }
        self.tick += 1;
        self.stats.ticks = self.tick;
        self.commands()
    }

    pub fn status(&self) -> StatusReport {
        StatusReport {
            tick: self.tick,
            time: self.time(),
            enabled: self.safety.enabled,
            estop_latched: self.safety.estop_latched,
            watchdog_tripped: self.safety.watchdog_tripped,
            positions: self.positions(),
            setpoints: self.axes.map(|a| a.setpoint),
            commands: self.commands(),
            velocities: self.axes.map(|a| a.velocity),
            loop_stats: self.stats.clone(),
        }
    }
}

/// Destination for the 8-axis setpoint messages produced by teleoperation.
pub trait SetpointSink {
    fn send_setpoints(&mut self, setpoints: &[i64; NUM_AXES]) -> Result<()>;
}

impl SetpointSink for Controller {
    fn send_setpoints(&mut self, setpoints: &[i64; NUM_AXES]) -> Result<()> {
        match self.handle(&Request::SetSetpoints { setpoints: *setpoints }) {
            Reply::Ok => Ok(()),
            other => Err(reply_error(other)),
        }
    }
}

pub(crate) fn reply_error(reply: Reply) -> Error {
    match reply {
        Reply::Rejected { axes } => Error::Range(
            axes.iter()
                .map(|a| format!("axis {}: {}", a.axis, a.reason))
                .collect::<Vec<_>>()
                .join("; "),
        ),
        Reply::Error { message } => Error::Protocol(message),
        other => Error::Protocol(format!("unexpected reply {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller() -> Controller {
        Controller::new(ControllerConfig::default()).unwrap()
    }

    fn step_to(c: &mut Controller, target: i64) {
        let mut sp = [0; NUM_AXES];
        sp[0] = target;
        assert_eq!(c.handle(&Request::SetSetpoints { setpoints: sp }), Reply::Ok);
    }

    #[test]
    fn zero_error_gives_zero_command() {
        let mut s = PidState::default();
        for _ in 0..10 {
            assert_eq!(pid_step(&PidGains::default(), &mut s, 5, 5, 1e-3), 0.0);
        }
    }

    #[test]
    fn proportional_only() {
        let g = PidGains {
            kp: 0.5,
            ki: 0.0,
            kd: 0.0,
            output_limit: 1.0,
            integral_limit: 1.0,
        };
        let mut s = PidState::default();
        assert_eq!(pid_step(&g, &mut s, 1, 0, 1e-3), 0.5);
        assert_eq!(pid_step(&g, &mut s, 10, 0, 1e-3), 1.0);
    }

    #[test]
    fn integral_saturates() {
        let g = PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            output_limit: 1.0,
            integral_limit: 0.25,
        };
        let mut s = PidState::default();
        for _ in 0..1000 {
            pid_step(&g, &mut s, 100, 0, 1e-3);
            assert!(s.integral <= 0.25);
        }
        assert_eq!(s.integral, 0.25);
    }

    #[test]
    fn no_derivative_kick_on_first_step() {
        let g = PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 1.0,
            output_limit: 1.0,
            integral_limit: 1.0,
        };
        let mut s = PidState::default();
        assert_eq!(pid_step(&g, &mut s, 1000, 0, 1e-3), 0.0);
    }

    #[test]
    fn plant_at_rest_stays() {
        let (mut x, mut v) = (3.0, 0.0);
        plant_step(&MotorModel::default(), &mut x, &mut v, 0.0, 1e-3);
        assert_eq!((x, v), (3.0, 0.0));
    }

    #[test]
    fn plant_reaches_free_speed() {
        let m = MotorModel::default();
        let (mut x, mut v) = (0.0, 0.0);
        let mut last = x;
        let steps = (5.0 * m.time_constant / 1e-3) as usize;
        for _ in 0..steps {
            plant_step(&m, &mut x, &mut v, 0.6, 1e-3);
            assert!(x >= last);
            last = x;
        }
        assert!((v - 0.6 * m.gain).abs() <= 0.01 * 0.6 * m.gain);
    }

    #[test]
    fn idle_status() {
        match controller().handle(&Request::Status) {
            Reply::Status(s) => {
                assert_eq!(s.positions, [0; NUM_AXES]);
                assert!(!s.enabled);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fresh_setpoint_drives_all_axes() {
        let mut c = controller();
        c.handle(&Request::Enable);
        c.handle(&Request::SetSetpoints { setpoints: [100; NUM_AXES] });
        let cmd = c.control_tick();
        assert!(cmd.iter().all(|&u| u > 0.0));
    }

    #[test]
    fn step_response_settles() {
        let mut c = controller();
        c.handle(&Request::Enable);
        step_to(&mut c, 1000);
        let mut peak = 0;
        for _ in 0..50 {
            c.control_tick();
            peak = peak.max(c.positions()[0]);
        }
        assert!((c.positions()[0] - 1000).abs() <= 2, "{}", c.positions()[0]);
        for _ in 0..200 {
            c.control_tick();
            peak = peak.max(c.positions()[0]);
            if c.tick() % 20 == 0 {
                step_to(&mut c, 1000);
            }
        }
        assert!((c.positions()[0] - 1000).abs() <= 2);
        assert!(peak <= 1200, "overshoot to {peak}");
    }

    #[test]
    fn watchdog_trips_after_silence() {
        let mut c = controller();
        c.handle(&Request::Enable);
        step_to(&mut c, 500);
        for _ in 0..=100 {
            c.control_tick();
            assert!(c.safety().enabled);
        }
        let cmd = c.control_tick();
        assert_eq!(cmd, [0.0; NUM_AXES]);
        assert!(c.safety().watchdog_tripped && !c.safety().enabled);
        step_to(&mut c, 600);
        assert_eq!(c.control_tick(), [0.0; NUM_AXES]);
    }

    #[test]
    fn estop_latches_until_enable() {
        let mut c = controller();
        c.handle(&Request::Enable);
        step_to(&mut c, 500);
        c.control_tick();
        c.handle(&Request::Estop);
        for k in 0..20 {
            step_to(&mut c, 500 + k);
            assert_eq!(c.control_tick(), [0.0; NUM_AXES]);
        }
        c.handle(&Request::Enable);
        step_to(&mut c, 900);
        assert!(c.control_tick()[0] > 0.0);
    }

    #[test]
    fn disable_zeroes_next_tick() {
        let mut c = controller();
        c.handle(&Request::Enable);
        step_to(&mut c, 800);
        for _ in 0..5 {
            c.control_tick();
        }
        c.handle(&Request::Disable);
        assert_eq!(c.control_tick(), [0.0; NUM_AXES]);
    }

    #[test]
    fn out_of_range_is_rejected_without_side_effects() {
        let mut c = controller();
        let before = c.clone();
        let mut sp = [0; NUM_AXES];
        sp[2] = i64::MAX;
        match c.handle(&Request::SetSetpoints { setpoints: sp }) {
            Reply::Rejected { axes } => {
                assert_eq!(axes.len(), 1);
                assert_eq!(axes[0].axis, 3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c, before);
    }

    #[test]
    fn default_limits_cover_joint_box() {
        let cfg = ControllerConfig::default();
        for a in &cfg.axes[..NUM_JOINTS] {
            assert!(a.min_setpoint <= 0 && a.max_setpoint >= 0);
            assert!(a.min_setpoint < a.max_setpoint);
        }
    }
}
