//! Measurement harnesses for the bench experiments.
//!
//! Repeatability: a fixed sequence of joint configurations is commanded through
//! the motor controller several times and the settled tip pose is logged at every
//! point. The spread of each point's logged poses about their mean is pooled into
//! one position and one orientation standard deviation.
//!
//! Target board: a planar grid of bull's eyes. A logged tip pose is scored by
//! where its needle axis pierces the board plane, measured from the bull's eye
//! centre.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, Reply, Request, NUM_AXES};
use crate::error::{Error, Result};
use crate::kinematics::so3::euler_xyz_angles;
use crate::kinematics::{JointLimits, JointVector, Pose, NUM_JOINTS};
use crate::model::RobotModel;
use crate::transmission::{actuators_to_joints, counts_to_actuators, joints_to_actuators, quantize_actuator};

type V3 = Vector3<f64>;

/// Joints varied by the repeatability sequence; the needle stays retracted.
pub const SEQUENCE_JOINTS: usize = 6;

/// `2^6` configurations at 1/4 and 3/4 of each of joints 1-6, in reflected Gray
/// order so consecutive points differ in one joint. Joint 1 is the slowest bit.
pub fn repeatability_sequence(limits: &JointLimits) -> Vec<JointVector> {
    let n = 1usize << SEQUENCE_JOINTS;
    (0..n)
        .map(|i| {
            let gray = i ^ (i >> 1);
            let mut u = [0.0; NUM_JOINTS];
            for (j, uj) in u.iter_mut().take(SEQUENCE_JOINTS).enumerate() {
                let bit = (gray >> (SEQUENCE_JOINTS - 1 - j)) & 1;
                *uj = if bit == 1 { 0.75 } else { 0.25 };
            }
            let mut q = limits.lerp(&u);
            q[NUM_JOINTS - 1] = limits.lower[NUM_JOINTS - 1];
            q
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub reps: usize,
    /// Where every repetition starts; the encoders are preset here.
    pub start: JointVector,
    /// Largest per-axis error, in counts, at which a point counts as reached.
    pub settle_counts: i64,
    /// Consecutive in-tolerance ticks required before the pose is logged.
    pub dwell_ticks: u64,
    /// Give up on a point after this many ticks.
    pub max_ticks_per_point: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            reps: 5,
            start: crate::sim::home_configuration(),
            settle_counts: 2,
            dwell_ticks: 50,
            max_ticks_per_point: 600_000,
        }
    }
}

/// Logged poses, `poses[rep][point]`, with the ticks each point took to settle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub poses: Vec<Vec<Pose>>,
    pub settle_ticks: Vec<Vec<u64>>,
}

/// Commands `sequence` through a fresh controller for every repetition and logs
/// the tool pose at the measured joints once each point has settled. Setpoints
/// are re-sent every tick, which keeps the watchdog fed.
pub fn replay_pose_sequence(model: &RobotModel, sequence: &[JointVector], cfg: &ReplayConfig) -> Result<ReplayLog> {
    if sequence.is_empty() || cfg.reps == 0 {
        return Err(Error::InvalidArgument("need at least one point and one repetition".into()));
    }
    let to_counts = |q: &JointVector| -> Result<[i64; NUM_AXES]> {
        model.chain.limits.check(q)?;
        let m = joints_to_actuators(&model.mixing, q)?;
        let mut out = [0i64; NUM_AXES];
        out[..NUM_JOINTS].copy_from_slice(&quantize_actuator(&m, &model.encoder)?.counts);
        Ok(out)
    };
    let start = to_counts(&cfg.start)?;
    let targets = sequence.iter().map(to_counts).collect::<Result<Vec<_>>>()?;
    let config = ControllerConfig::for_model(model)?;

    let mut log = ReplayLog {
        poses: Vec::with_capacity(cfg.reps),
        settle_ticks: Vec::with_capacity(cfg.reps),
    };
    for rep in 0..cfg.reps {
        let mut c = Controller::new(config.clone())?;
        c.preset_positions(&start);
        c.handle(&Request::Enable);
        let mut poses = Vec::with_capacity(targets.len());
        let mut ticks = Vec::with_capacity(targets.len());
        for (point, target) in targets.iter().enumerate() {
            let used = settle(&mut c, target, cfg).ok_or_else(|| {
                Error::NumericalFailure(format!(
                    "rep {rep} point {point} did not settle within {} ticks",
                    cfg.max_ticks_per_point
                ))
            })?;
            poses.push(measured_tool_pose(model, &c.positions())?);
            ticks.push(used);
        }
        log.poses.push(poses);
        log.settle_ticks.push(ticks);
    }
    Ok(log)
}

fn settle(c: &mut Controller, target: &[i64; NUM_AXES], cfg: &ReplayConfig) -> Option<u64> {
    let mut inside = 0;
    for t in 1..=cfg.max_ticks_per_point {
        if c.handle(&Request::SetSetpoints { setpoints: *target }) != Reply::Ok {
            return None;
        }
        c.control_tick();
        let pos = c.positions();
        if pos.iter().zip(target).all(|(p, s)| (p - s).abs() <= cfg.settle_counts) {
            inside += 1;
            if inside >= cfg.dwell_ticks {
                return Some(t);
            }
        } else {
            inside = 0;
        }
    }
    None
}

/// Tool pose, robot base frame, at the joints decoded from axes 1-7. Decoded
/// joints may sit a quantization step outside the limits, so they are not checked.
pub fn measured_tool_pose(model: &RobotModel, positions: &[i64; NUM_AXES]) -> Result<Pose> {
    let mut counts = [0i64; NUM_JOINTS];
    counts.copy_from_slice(&positions[..NUM_JOINTS]);
    let q = actuators_to_joints(&model.mixing, &counts_to_actuators(&counts, &model.encoder));
    if !q.is_finite() {
        return Err(Error::NumericalFailure("decoded joints are not finite".into()));
    }
    Ok(model.chain.frames_unchecked(&q)[crate::kinematics::NUM_FRAMES - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repeatability {
    /// Pooled RMS of the l2 distance from each point's mean position, metres.
    pub position_std: f64,
    /// Pooled RMS of the l2 distance from each point's mean roll-pitch-yaw, radians.
    pub orientation_std: f64,
    /// Worst single deviation, metres.
    pub max_position_deviation: f64,
}

/// Pools per-point spreads of `poses[rep][point]`. Every repetition must log the
/// same number of points.
pub fn repeatability(poses: &[Vec<Pose>]) -> Result<Repeatability> {
    let points = poses.first().map_or(0, Vec::len);
    if points == 0 || poses.iter().any(|r| r.len() != points) {
        return Err(Error::InvalidArgument("repetitions must log the same nonzero number of points".into()));
    }
    let reps = poses.len() as f64;
    let (mut sp, mut so, mut worst) = (0.0, 0.0, 0.0f64);
    for k in 0..points {
        // Offsets from the first repetition, so identical logs give exactly zero.
        let p0 = poses[0][k].position;
        let a0 = euler_xyz_angles(&poses[0][k].rotation);
        let dps: Vec<V3> = poses.iter().map(|r| r[k].position - p0).collect();
        let das: Vec<V3> = poses
            .iter()
            .map(|r| (euler_xyz_angles(&r[k].rotation) - a0).map(wrap_angle))
            .collect();
        let mean_p = dps.iter().sum::<V3>() / reps;
        let mean_a = das.iter().sum::<V3>() / reps;
        for (dp, da) in dps.iter().zip(&das) {
            let d = (dp - mean_p).norm();
            worst = worst.max(d);
            sp += d * d;
            so += (da - mean_a).norm_squared();
        }
    }
    let n = reps * points as f64;
    Ok(Repeatability {
        position_std: (sp / n).sqrt(),
        orientation_std: (so / n).sqrt(),
        max_position_deviation: worst,
    })
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// A planar grid of bull's eyes. `u` and `v` span the plane; the normal is `u × v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBoard {
    /// Centre of bull's eye (0, 0).
    pub origin: V3,
    pub u: V3,
    pub v: V3,
    pub rows: usize,
    pub cols: usize,
    /// Centre spacing, metres.
    pub pitch: f64,
}

impl TargetBoard {
    /// 4 x 4 grid at 10 mm pitch with `origin` at its first centre.
    pub fn four_by_four(origin: V3, u: V3, v: V3) -> Result<Self> {
        let b = Self {
            origin,
            u,
            v,
            rows: 4,
            cols: 4,
            pitch: 10e-3,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.u.norm() - 1.0).abs() < 1e-9 && (self.v.norm() - 1.0).abs() < 1e-9 && self.u.dot(&self.v).abs() < 1e-9;
        if !ortho {
            return Err(Error::InvalidArgument("board axes must be orthonormal".into()));
        }
        if self.rows == 0 || self.cols == 0 || !(self.pitch > 0.0) {
            return Err(Error::InvalidArgument("board needs a positive grid".into()));
        }
        Ok(())
    }

    pub fn normal(&self) -> V3 {
        self.u.cross(&self.v)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major bull's eye centres.
    pub fn centres(&self) -> Vec<V3> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.origin + self.u * (c as f64 * self.pitch) + self.v * (r as f64 * self.pitch))
            .collect()
    }

    /// Point where the line through `tip` along its z axis meets the plane.
    pub fn pierce_point(&self, tip: &Pose) -> Result<V3> {
        let n = self.normal();
        let axis = tip.z_axis();
        let denom = axis.dot(&n);
        if denom.abs() < 1e-9 {
            return Err(Error::NumericalFailure("needle axis is parallel to the board".into()));
        }
        let s = (self.origin - tip.position).dot(&n) / denom;
        Ok(tip.position + axis * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardScore {
    /// Per-shot distance from the bull's eye centre, metres, in input order.
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single shot.
    pub std: f64,
}

/// Scores logged tip poses, each paired with the index of the bull's eye it aimed at.
pub fn score_board(board: &TargetBoard, shots: &[(usize, Pose)]) -> Result<BoardScore> {
    board.validate()?;
    if shots.is_empty() {
        return Err(Error::InvalidArgument("no shots to score".into()));
    }
    let centres = board.centres();
    let errors = shots
        .iter()
        .map(|(k, pose)| {
            let c = centres
                .get(*k)
                .ok_or_else(|| Error::InvalidArgument(format!("bull's eye {k} is not on a {}-target board", centres.len())))?;
            Ok((board.pierce_point(pose)? - c).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BoardScore { errors, mean, std })
}
