//! Actuator-space to joint-space mapping through the belt and cable drives, and
//! encoder quantization of actuator positions.
//!
//! One actuator unit is one revolution of the gearbox output shaft. Mixing-matrix
//! entries are therefore joint units (m or rad) per output revolution.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kinematics::{JointVector, NUM_JOINTS};

pub type Matrix7 = SMatrix<f64, NUM_JOINTS, NUM_JOINTS>;

/// Actuator positions m1..m7 in gearbox-output revolutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 7]", into = "[f64; 7]")]
pub struct ActuatorVector(pub SVector<f64, NUM_JOINTS>);

impl ActuatorVector {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn from_array(m: [f64; NUM_JOINTS]) -> Self {
        Self(SVector::from(m))
    }

    pub fn to_array(&self) -> [f64; NUM_JOINTS] {
        self.0.into()
    }

    pub fn unit(actuator: usize) -> Self {
        let mut m = Self::zeros();
        m.0[actuator] = 1.0;
        m
    }
}

impl From<[f64; NUM_JOINTS]> for ActuatorVector {
    fn from(m: [f64; NUM_JOINTS]) -> Self {
        Self::from_array(m)
    }
}

impl From<ActuatorVector> for [f64; NUM_JOINTS] {
    fn from(m: ActuatorVector) -> Self {
        m.to_array()
    }
}

/// Lower-triangular map `q = M m` (rows are joints, columns are actuators).
///
/// The stage axes are decoupled; the four cable-driven joints pick up coupling from
/// the cable wrap on the proximal joints they pass over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 7]; 7]", into = "[[f64; 7]; 7]")]
pub struct MixingMatrix(Matrix7);

impl MixingMatrix {
    pub fn new(m: Matrix7) -> Result<Self> {
        ensure_finite(m.as_slice(), "mixing matrix")?;
        for i in 0..NUM_JOINTS {
            for j in (i + 1)..NUM_JOINTS {
                if m[(i, j)] != 0.0 {
                    return Err(Error::Model(format!(
                        "mixing matrix must be lower-triangular; entry ({}, {}) is {}",
                        i + 1,
                        j + 1,
                        m[(i, j)]
                    )));
                }
            }
            if m[(i, i)] == 0.0 {
                return Err(Error::SingularTransmission { joint: i + 1 });
            }
        }
        Ok(Self(m))
    }

    /// Build from rows without checking the diagonal; [`joints_to_actuators`] then
    /// reports a singular transmission.
    pub fn from_rows_unchecked(rows: [[f64; NUM_JOINTS]; NUM_JOINTS]) -> Self {
        Self(Matrix7::from_fn(|i, j| rows[i][j]))
    }

    #[rustfmt::skip]
    pub fn biopsy_arm() -> Self {
        Self::from_rows_unchecked([
            [5.73e-3, 0.0,     0.0,  0.0,      0.0,     0.0,      0.0],
            [0.0,     5.73e-3, 0.0,  0.0,      0.0,     0.0,      0.0],
            [0.0,     0.0,     0.24, 0.0,      0.0,     0.0,      0.0],
            [0.0,     0.0,     0.0,  0.45,     0.0,     0.0,      0.0],
            [0.0,     0.0,     0.0,  -0.35,    0.45,    0.0,      0.0],
            [0.0,     0.0,     0.0,  0.94,     -0.62,   0.79,     0.0],
            [0.0,     0.0,     0.0,  -5.26e-3, 3.23e-3, -8.73e-3, 6.35e-3],
        ])
    }

    pub fn matrix(&self) -> &Matrix7 {
        &self.0
    }

    pub fn rows(&self) -> [[f64; NUM_JOINTS]; NUM_JOINTS] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]))
    }
}

impl TryFrom<[[f64; NUM_JOINTS]; NUM_JOINTS]> for MixingMatrix {
    type Error = Error;
    fn try_from(rows: [[f64; NUM_JOINTS]; NUM_JOINTS]) -> Result<Self> {
        Self::new(Self::from_rows_unchecked(rows).0)
    }
}

impl From<MixingMatrix> for [[f64; NUM_JOINTS]; NUM_JOINTS] {
    fn from(m: MixingMatrix) -> Self {
        m.rows()
    }
}

pub fn actuators_to_joints(mixing: &MixingMatrix, m: &ActuatorVector) -> JointVector {
    JointVector(mixing.0 * m.0)
}

/// Solves `M m = q` by forward substitution.
pub fn joints_to_actuators(mixing: &MixingMatrix, q: &JointVector) -> Result<ActuatorVector> {
    ensure_finite(q.0.as_slice(), "joint vector")?;
    let mat = &mixing.0;
    let mut m = SVector::<f64, NUM_JOINTS>::zeros();
    for i in 0..NUM_JOINTS {
        let diag = mat[(i, i)];
        if diag == 0.0 {
            return Err(Error::SingularTransmission { joint: i + 1 });
        }
        let coupled: f64 = (0..i).map(|j| mat[(i, j)] * m[j]).sum();
        m[i] = (q[i] - coupled) / diag;
    }
    Ok(ActuatorVector(m))
}

/// Quadrature encoder on the motor shaft behind a planetary gearbox.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Counts per motor revolution after x4 quadrature decoding.
    pub counts_per_motor_rev: u32,
    pub gear_ratio: u32,
    /// Width of the signed count registers.
    #[serde(default = "default_count_bits")]
    pub count_bits: u32,
}

fn default_count_bits() -> u32 {
    32
}

impl Default for EncoderSpec {
    /// 500-line encoder decoded x4 on a 479:1 gearbox.
    fn default() -> Self {
        Self {
            counts_per_motor_rev: 2000,
            gear_ratio: 479,
            count_bits: 32,
        }
    }
}

impl EncoderSpec {
    pub fn counts_per_output_rev(&self) -> f64 {
        f64::from(self.counts_per_motor_rev) * f64::from(self.gear_ratio)
    }

    /// Output-shaft resolution in degrees per count.
    pub fn resolution_deg(&self) -> f64 {
        360.0 / self.counts_per_output_rev()
    }

    pub fn count_range(&self) -> (i64, i64) {
        let bits = self.count_bits.clamp(2, 63);
        let max = (1i64 << (bits - 1)) - 1;
        (-max - 1, max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantized {
    pub counts: [i64; NUM_JOINTS],
    pub actuators: ActuatorVector,
}

/// Rounds each actuator position to the nearest encoder count (ties away from zero).
pub fn quantize_actuator(m: &ActuatorVector, spec: &EncoderSpec) -> Result<Quantized> {
    ensure_finite(m.0.as_slice(), "actuator vector")?;
    let per_rev = spec.counts_per_output_rev();
    let (lo, hi) = spec.count_range();
    let mut counts = [0i64; NUM_JOINTS];
    for (i, count) in counts.iter_mut().enumerate() {
        let raw = (m.0[i] * per_rev).round();
        if raw < lo as f64 || raw > hi as f64 {
            return Err(Error::Range(format!(
                "actuator {} needs {raw} counts, outside the {}-bit register",
                i + 1,
                spec.count_bits
            )));
        }
        *count = raw as i64;
    }
    let actuators = ActuatorVector(SVector::from_fn(|i, _| counts[i] as f64 / per_rev));
    Ok(Quantized { counts, actuators })
}

pub fn counts_to_actuators(counts: &[i64; NUM_JOINTS], spec: &EncoderSpec) -> ActuatorVector {
    let per_rev = spec.counts_per_output_rev();
    ActuatorVector(SVector::from_fn(|i, _| counts[i] as f64 / per_rev))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        let mix = MixingMatrix::biopsy_arm();
        assert_eq!(actuators_to_joints(&mix, &ActuatorVector::zeros()), JointVector::zeros());
        assert_eq!(joints_to_actuators(&mix, &JointVector::zeros()).unwrap(), ActuatorVector::zeros());
    }

    #[test]
    fn unit_actuator_columns() {
        let mix = MixingMatrix::biopsy_arm();
        let q4 = actuators_to_joints(&mix, &ActuatorVector::unit(3));
        assert_eq!(q4.to_array(), [0.0, 0.0, 0.0, 0.45, -0.35, 0.94, -5.26e-3]);
        let q1 = actuators_to_joints(&mix, &ActuatorVector::unit(0));
        assert_eq!(q1.to_array(), [5.73e-3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn inverse_of_column_four_is_unit() {
        let mix = MixingMatrix::biopsy_arm();
        let q = JointVector::from_array([0.0, 0.0, 0.0, 0.45, -0.35, 0.94, -5.26e-3]);
        let m = joints_to_actuators(&mix, &q).unwrap();
        let unit = ActuatorVector::unit(3);
        assert!((m.0 - unit.0).amax() < 1e-12, "{m:?}");
    }

    #[test]
    fn actuator_four_coupling_signs() {
        let q = actuators_to_joints(&MixingMatrix::biopsy_arm(), &ActuatorVector::unit(3));
        assert!(q[3] > 0.0 && q[4] < 0.0 && q[5] > 0.0 && q[6] < 0.0);
    }

    #[test]
    fn structure_checks() {
        let mut rows = MixingMatrix::biopsy_arm().rows();
        rows[0][3] = 0.1;
        assert!(MixingMatrix::try_from(rows).is_err());
        let mut rows = MixingMatrix::biopsy_arm().rows();
        rows[4][4] = 0.0;
        assert!(matches!(
            MixingMatrix::try_from(rows),
            Err(Error::SingularTransmission { joint: 5 })
        ));
        let singular = MixingMatrix::from_rows_unchecked(rows);
        assert!(matches!(
            joints_to_actuators(&singular, &JointVector::zeros()),
            Err(Error::SingularTransmission { joint: 5 })
        ));
    }

    #[test]
    fn encoder_resolution() {
        let spec = EncoderSpec::default();
        assert_eq!(spec.counts_per_output_rev(), 958_000.0);
        assert!((spec.resolution_deg() - 3.7578e-4).abs() < 1e-8);
    }

    #[test]
    fn one_revolution_is_exact() {
        let spec = EncoderSpec::default();
        let q = quantize_actuator(&ActuatorVector::unit(2), &spec).unwrap();
        assert_eq!(q.counts[2], 958_000);
        assert_eq!(q.actuators, ActuatorVector::unit(2));
        let zero = quantize_actuator(&ActuatorVector::zeros(), &spec).unwrap();
        assert_eq!(zero.counts, [0; 7]);
    }

    #[test]
    fn single_count_on_roll_axis() {
        // One output count on actuator 3 rolls the trunnion by 0.24 of the output step.
        let spec = EncoderSpec::default();
        let m = ActuatorVector(SVector::from_fn(|i, _| if i == 2 { 1.0 / 958_000.0 } else { 0.0 }));
        let quant = quantize_actuator(&m, &spec).unwrap();
        assert_eq!(quant.counts[2], 1);
        let q = actuators_to_joints(&MixingMatrix::biopsy_arm(), &quant.actuators);
        let expected_rad = 0.24 * (1.0 / 958_000.0);
        assert!((q[2] - expected_rad).abs() < 1e-18);
    }

    #[test]
    fn ties_round_away_from_zero() {
        let spec = EncoderSpec::default();
        let half = 0.5 / spec.counts_per_output_rev();
        let m = ActuatorVector::from_array([half, -half, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = quantize_actuator(&m, &spec).unwrap();
        assert_eq!(&q.counts[..2], &[1, -1]);
    }

    #[test]
    fn overflow_is_range_error() {
        let spec = EncoderSpec {
            count_bits: 16,
            ..EncoderSpec::default()
        };
        let m = ActuatorVector::unit(0);
        assert!(matches!(quantize_actuator(&m, &spec), Err(Error::Range(_))));
        assert!(quantize_actuator(&ActuatorVector::unit(0), &EncoderSpec::default()).is_ok());
    }
}
