//! Independent oracles shared by the integration tests. Nothing here calls into
//! the library's kinematics beyond reading the DH constants.

#![allow(dead_code)]

use ctbot_core::kinematics::{DhRow, JointLimits, JointType, JointVector, KinematicChain, NUM_JOINTS};
use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};
use rand::Rng;

/// Modified-DH link transform written out element by element.
pub fn link_matrix(row: &DhRow, q: f64) -> Matrix4<f64> {
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

/// Base-to-frame-`frame` transform as a plain product of 4x4 matrices.
pub fn fk_oracle(chain: &KinematicChain, q: &JointVector, frame: usize) -> Matrix4<f64> {
    chain.dh.rows[..frame]
        .iter()
        .enumerate()
        .fold(Matrix4::identity(), |acc, (i, row)| {
            let qi = if i < NUM_JOINTS { q[i] } else { 0.0 };
            acc * link_matrix(row, qi)
        })
}

/// Rotation vector of `r` from the trace and the antisymmetric part; valid away
/// from angle pi, which finite differences never approach.
pub fn rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-12 {
        v / 2.0
    } else {
        v * (angle / (2.0 * angle.sin()))
    }
}

/// Central-difference geometric Jacobian of the tool frame: linear velocity of
/// the origin over angular velocity, both in the base frame.
pub fn jacobian_fd(chain: &KinematicChain, q: &JointVector, h: f64) -> SMatrix<f64, 6, NUM_JOINTS> {
    let frame = chain.dh.rows.len();
    let mut j = SMatrix::<f64, 6, NUM_JOINTS>::zeros();
    for i in 0..NUM_JOINTS {
        let (mut qp, mut qm) = (*q, *q);
        qp[i] += h;
        qm[i] -= h;
        let tp = fk_oracle(chain, &qp, frame);
        let tm = fk_oracle(chain, &qm, frame);
        let dp = (tp.fixed_view::<3, 1>(0, 3) - tm.fixed_view::<3, 1>(0, 3)) / (2.0 * h);
        let rp: Matrix3<f64> = tp.fixed_view::<3, 3>(0, 0).into();
        let rm: Matrix3<f64> = tm.fixed_view::<3, 3>(0, 0).into();
        let w = rotation_vector(&(rp * rm.transpose())) / (2.0 * h);
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&dp);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&w);
    }
    j
}

pub fn random_config(rng: &mut impl Rng, limits: &JointLimits) -> JointVector {
    let mut q = JointVector::zeros();
    for i in 0..NUM_JOINTS {
        q[i] = rng.random_range(limits.lower[i]..=limits.upper[i]);
    }
    q
}

/// Count of points within `radius` (inclusive) of each target by a double loop.
pub fn brute_force_counts(points: &[Vector3<f64>], targets: &[Vector3<f64>], radius: f64) -> Vec<u64> {
    targets
        .iter()
        .map(|t| points.iter().filter(|p| (*p - t).norm() <= radius).count() as u64)
        .collect()
}
