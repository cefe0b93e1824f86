//! Human-in-the-loop teleoperation at 400 Hz.
//!
//! Each tick integrates the 6-axis input into a target pose for the needle tip
//! (frame 8, robot base frame), runs a few warm-started DLS iterations toward it
//! with the insertion joint locked, and turns the joint solution into quantized
//! actuator setpoints for the motor controller. The insertion joint moves only
//! through the needle jog.
//!
//! Update rules, with `g_t` and `g_r` the configured gains:
//!
//! ```text
//! p[n+1] = p[n] + gamma * (g_t * v[n])
//! R[n+1] = euler_xyz(gamma * g_r * r[n]) * R[n]      (re-orthonormalized)
//! ```

pub mod protocol;
pub mod trace;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{SetpointSink, NUM_AXES};
use crate::error::{Error, Result};
use crate::kinematics::{so3, solve_dls, IkParams, JointVector, KinematicChain, Pose, NUM_JOINTS};
use crate::model::RobotModel;
use crate::scene::{check_collision, CollisionPair, RobotBody, Scene};
use crate::transmission::{joints_to_actuators, quantize_actuator, EncoderSpec, MixingMatrix};

type V3 = Vector3<f64>;

/// Index of the insertion joint q7.
pub const NEEDLE_JOINT: usize = NUM_JOINTS - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    /// Metres per device unit per tick at gamma = 1.
    pub translation_gain: f64,
    /// Radians per device unit per tick at gamma = 1.
    pub rotation_gain: f64,
    pub gamma_step: f64,
    /// Gamma never drops to or below this.
    pub gamma_min: f64,
    pub jog_step: f64,
    pub ik: IkParams,
    /// Rubber-band when the target leads the achieved pose by more than this (m).
    pub max_position_lead: f64,
    /// Rubber-band when the target leads the achieved pose by more than this (rad).
    pub max_orientation_lead: f64,
    /// Refuse ticks whose joint solution collides with the scene.
    pub collision_guard: bool,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        let mut active = [true; NUM_JOINTS];
        active[NEEDLE_JOINT] = false;
        Self {
            translation_gain: 1e-3,
            rotation_gain: 0.2f64.to_radians(),
            gamma_step: 1.25,
            gamma_min: 0.01,
            jog_step: 1e-4,
            ik: IkParams {
                damping: 0.02,
                max_iterations: 3,
                active,
                ..IkParams::default()
            },
            max_position_lead: 5e-3,
            max_orientation_lead: 0.1,
            collision_guard: false,
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self) -> Result<()> {
        self.ik.validate()?;
        let positive = [
            self.translation_gain,
            self.rotation_gain,
            self.jog_step,
            self.max_position_lead,
            self.max_orientation_lead,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidArgument("teleop gains, jog step and lead limits must be positive".into()));
        }
        if !(self.gamma_step.is_finite() && self.gamma_step > 1.0) {
            return Err(Error::InvalidArgument("gamma step factor must exceed 1".into()));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < 1.0) {
            return Err(Error::InvalidArgument("gamma_min must lie in (0, 1)".into()));
        }
        if self.ik.active[NEEDLE_JOINT] {
            return Err(Error::InvalidArgument("the insertion joint must be locked in teleop IK".into()));
        }
        Ok(())
    }
}

/// One sample of the 6-axis device plus buttons.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSample {
    /// Linear input along base x, y, z in device units.
    pub v: [f64; 3],
    /// Rotational input about roll, pitch, yaw in device units.
    pub r: [f64; 3],
    pub gamma_up: bool,
    pub gamma_down: bool,
    /// -1, 0 or +1.
    pub needle_jog: i8,
}

impl InputSample {
    /// Components clamped to the device range [-1, 1]; NaN reads as 0.
    pub fn clamped(&self) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        Self {
            v: self.v.map(c),
            r: self.r.map(c),
            needle_jog: self.needle_jog.clamp(-1, 1),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopState {
    /// Commanded tool pose p[n], R[n] in the robot base frame.
    pub target: Pose,
    pub gamma: f64,
    /// Last joint solution sent to the controller.
    pub q: JointVector,
}

impl TeleopState {
    pub fn needle_extension(&self) -> f64 {
        self.q[NEEDLE_JOINT]
    }
}

/// Position step `gamma * (g_t * v)` for an already clamped input.
pub fn position_increment(cfg: &TeleopConfig, gamma: f64, input: &InputSample) -> V3 {
    V3::from(input.v) * cfg.translation_gain * gamma
}

/// Applies the pose update rules. A zero rotational input leaves `R` bit-identical.
pub fn integrate_pose(cfg: &TeleopConfig, target: &Pose, gamma: f64, input: &InputSample) -> Pose {
    let input = input.clamped();
    let position = target.position + position_increment(cfg, gamma, &input);
    let rotation = if input.r == [0.0; 3] {
        target.rotation
    } else {
        let angles = V3::from(input.r) * (cfg.rotation_gain * gamma);
        so3::orthonormalize(&(so3::euler_xyz(&angles) * target.rotation))
    };
    Pose::new(position, rotation)
}

/// Gamma scaled up (`direction > 0`) or down by the step factor, kept in (gamma_min, 1].
/// A step that would leave the interval is refused rather than clamped onto its edge.
pub fn adjust_gamma(cfg: &TeleopConfig, gamma: f64, direction: i32) -> f64 {
    match direction.signum() {
        1 => (gamma * cfg.gamma_step).min(1.0),
        -1 => {
            let next = gamma / cfg.gamma_step;
            if next > cfg.gamma_min {
                next
            } else {
                gamma
            }
        }
        _ => gamma,
    }
}

/// Insertion joint moved by one jog step in `direction`, clamped to its limits.
pub fn needle_jog(cfg: &TeleopConfig, chain: &KinematicChain, extension: f64, direction: i32) -> f64 {
    let (lo, hi) = (chain.limits.lower[NEEDLE_JOINT], chain.limits.upper[NEEDLE_JOINT]);
    (extension + f64::from(direction.signum()) * cfg.jog_step).clamp(lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeleopEvent {
    /// The target ran too far ahead of the arm and was pulled back onto it.
    RubberBand { position_lead: f64, orientation_lead: f64 },
    /// The joint solution collided; the tick was refused.
    CollisionGuard { pairs: Vec<CollisionPair> },
    GammaChanged { gamma: f64 },
    /// A jog was requested at an end of the insertion range.
    NeedleAtLimit { extension: f64 },
    /// The tick failed before producing setpoints; the state was kept.
    Fault { message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IkReport {
    pub position_residual: f64,
    pub orientation_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub setpoints: [i64; NUM_AXES],
    pub ik: IkReport,
    pub events: Vec<TeleopEvent>,
}

/// Teleoperation pipeline owning [`TeleopState`].
#[derive(Clone, Debug)]
pub struct Teleop {
    chain: KinematicChain,
    mixing: MixingMatrix,
    encoder: EncoderSpec,
    guard: Option<(Scene, RobotBody)>,
    config: TeleopConfig,
    state: TeleopState,
}

impl Teleop {
    /// Starts at rest on `q0`: the target is the tool pose there and gamma is 1.
    /// `guard` supplies the collision world checked when the guard is on.
    pub fn new(model: &RobotModel, guard: Option<(Scene, RobotBody)>, config: TeleopConfig, q0: JointVector) -> Result<Self> {
        config.validate()?;
        model.chain.limits.check(&q0)?;
        if config.collision_guard && guard.is_none() {
            return Err(Error::InvalidArgument("collision guard needs a scene".into()));
        }
        let target = model.chain.tool_pose(&q0)?;
        Ok(Self {
            chain: model.chain.clone(),
            mixing: model.mixing.clone(),
            encoder: model.encoder,
            guard,
            config,
            state: TeleopState { target, gamma: 1.0, q: q0 },
        })
    }

    pub fn state(&self) -> &TeleopState {
        &self.state
    }

    pub fn config(&self) -> &TeleopConfig {
        &self.config
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(gamma > self.config.gamma_min && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside ({}, 1]", self.config.gamma_min)));
        }
        self.state.gamma = gamma;
        Ok(())
    }

    /// Re-anchors on a measured configuration: `q` clamped to limits, target on its tool pose.
    pub fn resync(&mut self, q: &JointVector) -> Result<()> {
        let q = self.chain.limits.clamp(q);
        self.state.target = self.chain.tool_pose(&q)?;
        self.state.q = q;
        Ok(())
    }

    pub fn adjust_gamma(&mut self, direction: i32) -> Option<TeleopEvent> {
        let next = adjust_gamma(&self.config, self.state.gamma, direction);
        (next != self.state.gamma).then(|| {
            self.state.gamma = next;
            TeleopEvent::GammaChanged { gamma: next }
        })
    }

    /// Moves the insertion joint and slides the target along the needle axis by
    /// the same amount, so IK keeps the rest of the arm still.
    pub fn jog(&mut self, direction: i32) -> Option<TeleopEvent> {
        let before = self.state.q[NEEDLE_JOINT];
        let after = needle_jog(&self.config, &self.chain, before, direction);
        if after == before {
            return (direction != 0).then_some(TeleopEvent::NeedleAtLimit { extension: before });
        }
        let axis = self.state.target.z_axis();
        self.state.q[NEEDLE_JOINT] = after;
        self.state.target.position += axis * (after - before);
        None
    }

    /// Quantized setpoints for `q`; axis 8 is the spare and stays at 0.
    pub fn setpoints_for(&self, q: &JointVector) -> Result<[i64; NUM_AXES]> {
        let m = joints_to_actuators(&self.mixing, q)?;
        let counts = quantize_actuator(&m, &self.encoder)?.counts;
        let mut out = [0i64; NUM_AXES];
        out[..NUM_JOINTS].copy_from_slice(&counts);
        Ok(out)
    }

    /// The tick without side effects: next state and report.
    pub fn compute_tick(&self, input: &InputSample) -> Result<(TeleopState, TickReport)> {
        let input = input.clamped();
        let mut probe = self.clone();
        let mut events = Vec::new();
        if input.gamma_up {
            events.extend(probe.adjust_gamma(1));
        }
        if input.gamma_down {
            events.extend(probe.adjust_gamma(-1));
        }
        if input.needle_jog != 0 {
            events.extend(probe.jog(i32::from(input.needle_jog)));
        }
        let before = probe.state;
        let mut target = integrate_pose(&self.config, &before.target, before.gamma, &input);
        let sol = solve_dls(&self.chain, &before.q, &target, &self.config.ik, None)?;
        let mut q = sol.q;
        q[NEEDLE_JOINT] = before.q[NEEDLE_JOINT];

        let achieved = self.chain.tool_pose(&q)?;
        let (dp, dr) = achieved.error_to(&target);
        if dp.norm() > self.config.max_position_lead || dr.norm() > self.config.max_orientation_lead {
            events.push(TeleopEvent::RubberBand {
                position_lead: dp.norm(),
                orientation_lead: dr.norm(),
            });
            target = achieved;
        }
        if self.config.collision_guard {
            if let Some((scene, body)) = &self.guard {
                let report = check_collision(scene, body, &self.chain, &q)?;
                if report.in_collision {
                    events.push(TeleopEvent::CollisionGuard { pairs: report.pairs });
                    q = before.q;
                    target = self.chain.tool_pose(&q)?;
                }
            }
        }
        let next = TeleopState {
            target,
            gamma: before.gamma,
            q,
        };
        let report = TickReport {
            setpoints: self.setpoints_for(&q)?,
            ik: IkReport {
                position_residual: sol.position_residual,
                orientation_residual: sol.orientation_residual,
                iterations: sol.iterations,
                converged: sol.converged,
            },
            events,
        };
        Ok((next, report))
    }

    /// Computes a tick and sends its setpoints. If the sink fails the state is
    /// left exactly as it was and the error is returned.
    pub fn tick(&mut self, input: &InputSample, sink: &mut dyn SetpointSink) -> Result<TickReport> {
        let (next, report) = self.compute_tick(input)?;
        sink.send_setpoints(&report.setpoints)?;
        self.state = next;
        Ok(report)
    }
}

/// Sink that records every setpoint message.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordingSink {
    pub messages: Vec<[i64; NUM_AXES]>,
}

impl SetpointSink for RecordingSink {
    fn send_setpoints(&mut self, setpoints: &[i64; NUM_AXES]) -> Result<()> {
        self.messages.push(*setpoints);
        Ok(())
    }
}

/// Angle (rad) of the rotation taking `b` onto `a`.
pub fn rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    so3::log_map(&(a * b.transpose())).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct DeadSink;

    impl SetpointSink for DeadSink {
        fn send_setpoints(&mut self, _: &[i64; NUM_AXES]) -> Result<()> {
            Err(Error::ConnectionLost("test".into()))
        }
    }

    pub(crate) fn start() -> JointVector {
        JointVector::from_array([0.15, 0.15, 0.1, 0.2, 0.6, -0.7, 0.02])
    }

    fn teleop() -> Teleop {
        Teleop::new(&RobotModel::biopsy_arm(), None, TeleopConfig::default(), start()).unwrap()
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let mut t = teleop();
        let mut sink = RecordingSink::default();
        let s0 = *t.state();
        for _ in 0..50 {
            t.tick(&InputSample::default(), &mut sink).unwrap();
        }
        assert_eq!(*t.state(), s0);
        assert!(sink.messages.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(sink.messages[0][7], 0);
    }

    #[test]
    fn position_update_is_exact() {
        let cfg = TeleopConfig::default();
        let input = InputSample {
            v: [0.3, -0.7, 1.0],
            ..Default::default()
        };
        let p0 = Pose::from_translation(V3::new(0.1, 0.2, 0.3));
        let p1 = integrate_pose(&cfg, &p0, 0.5, &input);
        assert_eq!(p1.position, p0.position + V3::new(0.3, -0.7, 1.0) * 1e-3 * 0.5);
        assert_eq!(p1.rotation, p0.rotation);
        let half = position_increment(&cfg, 0.25, &input);
        assert_eq!(half * 2.0, position_increment(&cfg, 0.5, &input));
    }

    #[test]
    fn rotation_update_matches_convention() {
        let cfg = TeleopConfig {
            rotation_gain: 1.0,
            ..TeleopConfig::default()
        };
        let input = InputSample {
            r: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let p = integrate_pose(&cfg, &Pose::identity(), 1.0, &input);
        assert!((p.rotation - so3::rot_x(1.0)).abs().max() < 1e-15);
        let left = InputSample {
            r: [0.0, 0.0, 0.5],
            ..Default::default()
        };
        let r0 = so3::rot_x(0.3);
        let p = integrate_pose(&cfg, &Pose::new(V3::zeros(), r0), 1.0, &left);
        assert!((p.rotation - so3::rot_z(0.5) * r0).abs().max() < 1e-15);
    }

    #[test]
    fn inputs_are_clamped() {
        let cfg = TeleopConfig::default();
        let wild = InputSample {
            v: [5.0, -3.0, f64::NAN],
            ..Default::default()
        };
        let p = integrate_pose(&cfg, &Pose::identity(), 1.0, &wild);
        assert_eq!(p.position, V3::new(1e-3, -1e-3, 0.0));
    }

    #[test]
    fn gamma_steps() {
        let cfg = TeleopConfig::default();
        assert_eq!(adjust_gamma(&cfg, 1.0, 1), 1.0);
        assert_eq!(adjust_gamma(&cfg, 0.5, 1), 0.625);
        let g = adjust_gamma(&cfg, adjust_gamma(&cfg, 0.3, 1), -1);
        assert!((g - 0.3).abs() < 1e-12);
        let mut g = 1.0;
        for _ in 0..100 {
            g = adjust_gamma(&cfg, g, -1);
            assert!(g > cfg.gamma_min);
        }
    }

    #[test]
    fn jog_steps_and_clamps() {
        let cfg = TeleopConfig::default();
        let chain = KinematicChain::biopsy_arm();
        assert_eq!(needle_jog(&cfg, &chain, 0.0, 1), 1e-4);
        assert_eq!(needle_jog(&cfg, &chain, 0.12, 1), 0.12);
        assert_eq!(needle_jog(&cfg, &chain, 0.0, -1), 0.0);
        assert_eq!(needle_jog(&cfg, &chain, needle_jog(&cfg, &chain, 0.05, 1), -1), 0.05);
    }

    #[test]
    fn jog_moves_tip_along_needle() {
        let mut t = teleop();
        let tip0 = t.chain().tool_pose(&t.state().q).unwrap();
        let mut sink = RecordingSink::default();
        for _ in 0..5 {
            t.jog(1);
        }
        t.tick(&InputSample::default(), &mut sink).unwrap();
        let tip1 = t.chain().tool_pose(&t.state().q).unwrap();
        assert!((t.state().needle_extension() - (0.02 + 5e-4)).abs() < 1e-15);
        assert!(((tip1.position - tip0.position) - tip0.z_axis() * 5e-4).norm() < 1e-12);
        assert!((tip1.position - t.state().target.position).norm() < 1e-9);
    }

    #[test]
    fn dead_sink_freezes_state() {
        let mut t = teleop();
        let before = *t.state();
        let input = InputSample {
            v: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        assert!(matches!(t.tick(&input, &mut DeadSink), Err(Error::ConnectionLost(_))));
        assert_eq!(*t.state(), before);
    }

    #[test]
    fn constant_x_input_advances_tip() {
        let mut t = teleop();
        let mut sink = RecordingSink::default();
        let input = InputSample {
            v: [0.2, 0.0, 0.0],
            ..Default::default()
        };
        let mut last = t.chain().tool_pose(&t.state().q).unwrap().position;
        for _ in 0..100 {
            let report = t.tick(&input, &mut sink).unwrap();
            assert!(report.events.is_empty(), "{:?}", report.events);
            let tip = t.chain().tool_pose(&t.state().q).unwrap().position;
            assert!(tip.x > last.x);
            last = tip;
        }
        let target = t.state().target.position;
        assert!((last - target).norm() < 1e-4);
    }

    #[test]
    fn rubber_band_bounds_lead() {
        let cfg = TeleopConfig {
            translation_gain: 0.05,
            ..TeleopConfig::default()
        };
        let mut t = Teleop::new(&RobotModel::biopsy_arm(), None, cfg.clone(), start()).unwrap();
        let mut sink = RecordingSink::default();
        let input = InputSample {
            v: [1.0, 1.0, 1.0],
            ..Default::default()
        };
        let mut banded = false;
        for _ in 0..200 {
            let report = t.tick(&input, &mut sink).unwrap();
            banded |= report.events.iter().any(|e| matches!(e, TeleopEvent::RubberBand { .. }));
            let achieved = t.chain().tool_pose(&t.state().q).unwrap();
            let (dp, dr) = achieved.error_to(&t.state().target);
            assert!(dp.norm() <= cfg.max_position_lead && dr.norm() <= cfg.max_orientation_lead);
        }
        assert!(banded);
    }
}
