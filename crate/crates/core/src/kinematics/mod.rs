//! Modified Denavit-Hartenberg forward kinematics and the geometric Jacobian of the
//! biopsy arm, plus the damped-least-squares IK solver in [`ik`].
//!
//! Each DH row moves from frame `n` to frame `n + 1` by rotating about the parent x
//! axis by `alpha`, translating `a` along the parent x axis, rotating about the new z
//! axis by `theta` and translating `d` along that new z axis. Prismatic joints add
//! their coordinate to `d`, revolute joints add theirs to `theta`.

pub mod ik;
pub mod so3;

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Index, IndexMut, Mul};

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub use ik::{solve_dls, IkParams, IkSolution, JointCentering, NullspaceObjective};

/// Number of actuated joints.
pub const NUM_JOINTS: usize = 7;
/// Number of DH frames, joints 1..7 plus the needle-tip tool frame.
pub const NUM_FRAMES: usize = 8;
/// Index of the needle-tip tool frame.
pub const TOOL_FRAME: usize = 8;

pub type Jacobian = SMatrix<f64, 6, NUM_JOINTS>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Prismatic,
    Revolute,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub joint_type: JointType,
    pub a: f64,
    pub alpha: f64,
    pub d_offset: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub const fn new(joint_type: JointType, a: f64, alpha: f64, d_offset: f64, theta_offset: f64) -> Self {
        Self {
            joint_type,
            a,
            alpha,
            d_offset,
            theta_offset,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite(&[self.a, self.alpha, self.d_offset, self.theta_offset], "DH row")
    }
}

/// Relative transform from frame `n` to frame `n + 1` for one DH row at joint value `q`.
///
/// The returned rotation is `Rot_x(alpha) * Rot_z(theta)` and the origin is
/// `a * x_n + d * z_{n+1}`, both expressed in the parent frame.
pub fn dh_transform(row: &DhRow, q: f64) -> Result<Pose> {
    row.validate()?;
    if !q.is_finite() {
        return Err(Error::InvalidArgument(format!("joint value {q} is not finite")));
    }
    Ok(dh_transform_unchecked(row, q))
}

fn dh_transform_unchecked(row: &DhRow, q: f64) -> Pose {
    let (d, theta) = match row.joint_type {
        JointType::Prismatic => (row.d_offset + q, row.theta_offset),
        JointType::Revolute => (row.d_offset, row.theta_offset + q),
        JointType::Fixed => (row.d_offset, row.theta_offset),
    };
    let tilt = so3::rot_x(row.alpha);
    let rotation = tilt * so3::rot_z(theta);
    let position = Vector3::new(row.a, 0.0, 0.0) + rotation.column(2) * d;
    Pose { position, rotation }
}

/// Ordered modified-DH rows: seven actuated joints followed by the fixed tool frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhTable {
    pub rows: Vec<DhRow>,
}

impl DhTable {
    pub fn new(rows: Vec<DhRow>) -> Result<Self> {
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != NUM_FRAMES {
            return Err(Error::Model(format!(
                "DH table needs {NUM_FRAMES} rows, found {}",
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            row.validate()?;
            let actuated = row.joint_type != JointType::Fixed;
            if actuated != (i < NUM_JOINTS) {
                return Err(Error::Model(format!(
                    "DH row {} must be {}",
                    i + 1,
                    if i < NUM_JOINTS { "actuated" } else { "fixed" }
                )));
            }
        }
        Ok(())
    }

    /// The biopsy arm: a linear-linear-roll stage followed by the cable-driven
    /// yaw-pitch-yaw wrist, the needle-advance joint and the needle tip.
    pub fn biopsy_arm() -> Self {
        use JointType::*;
        Self {
            rows: vec![
                DhRow::new(Prismatic, 0.0, FRAC_PI_2, 0.0, 0.0),
                DhRow::new(Prismatic, 0.0, -FRAC_PI_2, 0.0, 0.0),
                DhRow::new(Revolute, 0.0, 0.0, 0.0, 0.0),
                DhRow::new(Revolute, 0.0, FRAC_PI_2, 0.0, FRAC_PI_2),
                DhRow::new(Revolute, 8e-2, FRAC_PI_2, 0.0, 0.0),
                DhRow::new(Revolute, 8e-2, FRAC_PI_2, 0.0, -FRAC_PI_2),
                DhRow::new(Prismatic, 5.57e-2, -FRAC_PI_2, 2.74e-2, 0.0),
                DhRow::new(Fixed, 0.0, 0.0, 1.15e-1, FRAC_PI_2),
            ],
        }
    }

    pub fn joint_type(&self, joint: usize) -> JointType {
        self.rows[joint].joint_type
    }
}

/// Joint coordinates q1..q7: metres for the prismatic joints 1, 2 and 7, radians otherwise.
/// Indexing is 0-based (`q[0]` is q1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 7]", into = "[f64; 7]")]
pub struct JointVector(pub SVector<f64, NUM_JOINTS>);

impl JointVector {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn from_array(q: [f64; NUM_JOINTS]) -> Self {
        Self(SVector::from(q))
    }

    pub fn to_array(&self) -> [f64; NUM_JOINTS] {
        self.0.into()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        (self.0 - other.0).amax()
    }
}

impl From<[f64; NUM_JOINTS]> for JointVector {
    fn from(q: [f64; NUM_JOINTS]) -> Self {
        Self::from_array(q)
    }
}

impl From<JointVector> for [f64; NUM_JOINTS] {
    fn from(q: JointVector) -> Self {
        q.to_array()
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Box limits on the joint coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: [f64; NUM_JOINTS],
    pub upper: [f64; NUM_JOINTS],
}

impl JointLimits {
    pub fn new(lower: [f64; NUM_JOINTS], upper: [f64; NUM_JOINTS]) -> Result<Self> {
        ensure_finite(&lower, "joint lower limits")?;
        ensure_finite(&upper, "joint upper limits")?;
        if let Some(i) = (0..NUM_JOINTS).find(|&i| lower[i] > upper[i]) {
            return Err(Error::Model(format!("joint {} has lower limit above upper limit", i + 1)));
        }
        Ok(Self { lower, upper })
    }

    /// Estimated travel: 0.3 m stage axes, a full trunnion roll, wrist ranges that
    /// keep the arm folding inside a 65 cm bore and 12 cm of needle advance.
    pub fn biopsy_arm() -> Self {
        Self {
            lower: [0.0, 0.0, -PI, -FRAC_PI_2, -2.2, -2.2, 0.0],
            upper: [0.3, 0.3, PI, FRAC_PI_2, 2.2, 2.2, 0.12],
        }
    }

    pub fn check(&self, q: &JointVector) -> Result<()> {
        for i in 0..NUM_JOINTS {
            let v = q[i];
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("q{} is not finite", i + 1)));
            }
            if v < self.lower[i] || v > self.upper[i] {
                return Err(Error::LimitViolation {
                    joint: i + 1,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        self.check(q).is_ok()
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        let mut out = *q;
        for i in 0..NUM_JOINTS {
            out[i] = q[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn center(&self) -> JointVector {
        let mut q = JointVector::zeros();
        for i in 0..NUM_JOINTS {
            q[i] = 0.5 * (self.lower[i] + self.upper[i]);
        }
        q
    }

    pub fn span(&self, joint: usize) -> f64 {
        self.upper[joint] - self.lower[joint]
    }

    /// Point of the box at fractions `u` (each in [0, 1]) of every joint's travel.
    pub fn lerp(&self, u: &[f64; NUM_JOINTS]) -> JointVector {
        let mut q = JointVector::zeros();
        for i in 0..NUM_JOINTS {
            q[i] = self.lower[i] + u[i] * self.span(i);
        }
        q
    }
}

/// Rigid transform: position in metres and a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self {
            position,
            rotation: Matrix3::identity(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            position: -(rt * self.position),
            rotation: rt,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose {
            position: m.fixed_view::<3, 1>(0, 3).into_owned(),
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
        }
    }

    /// Needle axis for the tool frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn orthonormality_error(&self) -> f64 {
        so3::orthonormality_error(&self.rotation)
    }

    /// Error that moves `self` onto `target`: translation difference and the rotation
    /// vector of `R_target * R_self^T`, both in the base frame.
    pub fn error_to(&self, target: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        let dp = target.position - self.position;
        let dr = so3::log_map(&(target.rotation * self.rotation.transpose()));
        (dp, dr)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        Pose {
            position: self.rotation * rhs.position + self.position,
            rotation: self.rotation * rhs.rotation,
        }
    }
}

/// DH table together with the joint limits it is evaluated under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub dh: DhTable,
    pub limits: JointLimits,
}

impl KinematicChain {
    pub fn new(dh: DhTable, limits: JointLimits) -> Result<Self> {
        dh.validate()?;
        Ok(Self { dh, limits })
    }

    pub fn biopsy_arm() -> Self {
        Self {
            dh: DhTable::biopsy_arm(),
            limits: JointLimits::biopsy_arm(),
        }
    }

    /// Pose of `frame` (1..=8) in the base frame.
    pub fn forward(&self, q: &JointVector, frame: usize) -> Result<Pose> {
        if !(1..=NUM_FRAMES).contains(&frame) {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} outside 1..={NUM_FRAMES}"
            )));
        }
        self.limits.check(q)?;
        Ok(self.frames_unchecked(q)[frame - 1])
    }

    pub fn tool_pose(&self, q: &JointVector) -> Result<Pose> {
        self.forward(q, TOOL_FRAME)
    }

    /// Poses of frames 1..=8 in the base frame (index 0 is frame 1).
    pub fn frames(&self, q: &JointVector) -> Result<[Pose; NUM_FRAMES]> {
        self.limits.check(q)?;
        Ok(self.frames_unchecked(q))
    }

    pub(crate) fn frames_unchecked(&self, q: &JointVector) -> [Pose; NUM_FRAMES] {
        let mut out = [Pose::identity(); NUM_FRAMES];
        let mut acc = Pose::identity();
        for (i, row) in self.dh.rows.iter().enumerate() {
            let qi = if i < NUM_JOINTS { q[i] } else { 0.0 };
            acc = &acc * &dh_transform_unchecked(row, qi);
            out[i] = acc;
        }
        out
    }

    /// Geometric Jacobian of the tool frame: rows 0..3 linear velocity, rows 3..6
    /// angular velocity, both in the base frame.
    pub fn jacobian(&self, q: &JointVector) -> Result<Jacobian> {
        self.limits.check(q)?;
        Ok(self.jacobian_from_frames(&self.frames_unchecked(q)))
    }

    pub(crate) fn jacobian_from_frames(&self, frames: &[Pose; NUM_FRAMES]) -> Jacobian {
        let tip = frames[NUM_FRAMES - 1].position;
        let mut jac = Jacobian::zeros();
        for i in 0..NUM_JOINTS {
            // Joint i moves along / about the z axis of its own frame.
            let axis = frames[i].z_axis();
            match self.dh.joint_type(i) {
                JointType::Prismatic => {
                    jac.fixed_view_mut::<3, 1>(0, i).copy_from(&axis);
                }
                JointType::Revolute => {
                    let lever = tip - frames[i].position;
                    jac.fixed_view_mut::<3, 1>(0, i).copy_from(&axis.cross(&lever));
                    jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
                }
                JointType::Fixed => {}
            }
        }
        jac
    }
}
