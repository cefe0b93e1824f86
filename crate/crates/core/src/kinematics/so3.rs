//! Small rotation-matrix helpers shared by the kinematics and teleoperation code.

use nalgebra::{Matrix3, Vector3};

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation from roll/pitch/yaw applied as intrinsic X, then Y, then Z:
/// `Rx(roll) * Ry(pitch) * Rz(yaw)`.
pub fn euler_xyz(angles: &Vector3<f64>) -> Matrix3<f64> {
    rot_x(angles.x) * rot_y(angles.y) * rot_z(angles.z)
}

/// Inverse of [`euler_xyz`] for the non-degenerate branch (|pitch| < pi/2).
pub fn euler_xyz_angles(r: &Matrix3<f64>) -> Vector3<f64> {
    // R = Rx(a) Ry(b) Rz(c): R[0,2] = sin b, R[0,0] = cos b cos c, R[0,1] = -cos b sin c,
    // R[1,2] = -sin a cos b, R[2,2] = cos a cos b.
    let pitch = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let roll = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let yaw = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Log map of a rotation matrix: the rotation vector (axis * angle, angle in [0, pi]).
///
/// Goes through a unit quaternion extracted with the largest-pivot method, which stays
/// well conditioned near both the identity and half turns.
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (w, x, y, z) = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        (
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        (
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        (
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        (
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let (w, v) = if w < 0.0 {
        (-w, -Vector3::new(x, y, z))
    } else {
        (w, Vector3::new(x, y, z))
    };
    let sin_half = v.norm();
    if sin_half < 1e-300 {
        return Vector3::zeros();
    }
    let angle = 2.0 * sin_half.atan2(w);
    v * (angle / sin_half)
}

/// Rodrigues' formula; inverse of [`log_map`].
pub fn exp_map(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    if angle < 1e-12 {
        return Matrix3::identity() + skew(w);
    }
    let k = skew(&(w / angle));
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Gram-Schmidt re-orthonormalization keeping the first column's direction.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x = r.column(0).normalize();
    let y_raw = r.column(1) - x * x.dot(&r.column(1));
    let y = y_raw.normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

/// `max |(R^T R - I)_ij|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}
