//! Text forms accepted on the command line: poses, joint vectors and timesteps.

use ctbot_core::kinematics::Pose;
use ctbot_core::teleop::protocol::WirePose;
use nalgebra::{Matrix3, Vector3};

/// Rotation inputs further than this from orthonormal are rejected.
pub const ORTHONORMALITY_TOL: f64 = 1e-6;

/// Parses a pose from any of:
///
/// - the text printed by `ctbot fk` (`position` and `rotation` lines; a `frame` line is ignored)
/// - the JSON printed by `ctbot fk --json` (`{"position":[..],"rotation":[[..],..]}`)
/// - twelve bare numbers: x y z then the rotation row-major
///
/// Numbers may be separated by whitespace or commas.
pub fn parse_pose(text: &str) -> Result<Pose, String> {
    let text = text.trim();
    let pose = if text.starts_with('{') {
        let w: WirePose = serde_json::from_str(text).map_err(|e| format!("cannot parse pose JSON: {e}"))?;
        let r = w.rotation;
        Pose::new(
            Vector3::from(w.position),
            Matrix3::from_fn(|i, j| r[i][j]),
        )
    } else {
        let mut values = Vec::with_capacity(12);
        for line in text.lines() {
            let mut tokens = tokens(line).peekable();
            match tokens.peek() {
                Some(&"frame") => continue,
                Some(&"position") | Some(&"rotation") => {
                    tokens.next();
                }
                _ => {}
            }
            for t in tokens {
                values.push(t.parse::<f64>().map_err(|_| format!("cannot parse pose: {t:?} is not a number"))?);
            }
        }
        if values.len() != 12 {
            return Err(format!("a pose needs 12 numbers (position, then rotation row-major), got {}", values.len()));
        }
        Pose::new(
            Vector3::new(values[0], values[1], values[2]),
            Matrix3::from_row_slice(&values[3..]),
        )
    };
    if !pose.position.iter().chain(pose.rotation.iter()).all(|v| v.is_finite()) {
        return Err("pose contains non-finite values".into());
    }
    let err = pose.orthonormality_error();
    if err > ORTHONORMALITY_TOL {
        return Err(format!("rotation is not orthonormal (error {err:.3e})"));
    }
    Ok(pose)
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

/// Seconds from `1ms`, `250us`, `0.001s` or a bare number of seconds.
pub fn parse_timestep(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (number, scale) = if let Some(n) = t.strip_suffix("ms") {
        (n, 1e-3)
    } else if let Some(n) = t.strip_suffix("us") {
        (n, 1e-6)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    let v: f64 = number.trim().parse().map_err(|_| format!("cannot parse timestep {text:?}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("timestep must be positive, got {text:?}"));
    }
    Ok(v * scale)
}

/// Prints a pose in the layout [`parse_pose`] reads back. `{:?}` on f64 is the
/// shortest text that parses to the same bits.
pub fn format_pose(frame: usize, pose: &Pose) -> String {
    let p = &pose.position;
    let r = &pose.rotation;
    let row = |i: usize| format!("{:?} {:?} {:?}", r[(i, 0)], r[(i, 1)], r[(i, 2)]);
    format!(
        "frame     {frame}\nposition  {:?} {:?} {:?}\nrotation  {}  {}  {}\n",
        p.x,
        p.y,
        p.z,
        row(0),
        row(1),
        row(2)
    )
}
