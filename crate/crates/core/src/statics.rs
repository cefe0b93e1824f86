//! Needle-load torque bounds, cable stretch, joint and tip stiffness, the cable
//! material catalog and bearing load-rating checks.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lever from joint 4 to the needle with the wrist outstretched (m).
pub const JOINT4_LEVER: f64 = 0.16;
/// Lever from joint 5 to the needle (m).
pub const JOINT5_LEVER: f64 = 0.08;
/// Upper bound on gravity torque at the cable-driven joints (N m).
pub const GRAVITY_TORQUE_BOUND: f64 = 0.011;
/// Highest expected needle thrust during a core biopsy (N).
pub const BIOPSY_NEEDLE_FORCE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreepResistance {
    Fair,
    Good,
    Great,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sourcing {
    Easy,
    Ok,
    Difficult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CableMaterial {
    pub name: String,
    /// Pa.
    pub tensile_modulus: f64,
    /// Pa.
    pub tensile_strength: f64,
    /// Minimum pulley-to-cable diameter ratio.
    pub dd_ratio: f64,
    pub creep_resistance: CreepResistance,
    pub sourcing: Sourcing,
}

impl CableMaterial {
    fn entry(
        name: &str,
        tensile_modulus: f64,
        tensile_strength: f64,
        dd_ratio: f64,
        creep_resistance: CreepResistance,
        sourcing: Sourcing,
    ) -> Self {
        Self {
            name: name.to_string(),
            tensile_modulus,
            tensile_strength,
            dd_ratio,
            creep_resistance,
            sourcing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tensile_modulus > 0.0 && self.tensile_strength > 0.0 && self.dd_ratio > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cable material {} needs positive modulus, strength and D:d ratio",
                self.name
            )));
        }
        Ok(())
    }
}

/// Cable candidates considered for the wrist drive.
pub fn cable_catalog() -> Vec<CableMaterial> {
    use CreepResistance::*;
    use Sourcing::*;
    vec![
        CableMaterial::entry("SK99", 155e9, 4.1e9, 5.0, Fair, Easy),
        CableMaterial::entry("DM20", 94e9, 3.4e9, 8.0, Great, Difficult),
        CableMaterial::entry("Vectran", 103e9, 3e9, 8.0, Good, Ok),
        CableMaterial::entry("SS", 210e9, 2e9, 18.0, Great, Easy),
    ]
}

/// One cable run from the trunnion to a wrist joint pulley.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CableRun {
    pub material: CableMaterial,
    /// Unloaded free length L0 (m).
    pub free_length: f64,
    /// Cable cross-section A (m^2).
    pub cross_section: f64,
    /// Joint drive pulley radius r (m).
    pub drive_pulley_radius: f64,
}

impl CableRun {
    /// SK99 run with geometry calibrated to give the quoted tip stiffness; the
    /// geometry is a modelling choice, not a measurement.
    pub fn calibrated_default() -> Self {
        Self {
            material: cable_catalog().remove(0),
            free_length: 1.2,
            cross_section: 0.5e-6,
            drive_pulley_radius: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        for (name, v) in [
            ("free length", self.free_length),
            ("cross-section", self.cross_section),
            ("pulley radius", self.drive_pulley_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("cable run {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Worst-case needle-load torques `(tau4, tau5, tau6)` in N m for thrust `force` (N).
///
/// The thrust acts through the outstretched wrist; `max sin(x) = 1` so the bounds
/// are the levers times the force. Joint 6 sees no moment from a pure thrust.
pub fn needle_torque_bounds(force: f64) -> Result<[f64; 3]> {
    if !(force.is_finite() && force >= 0.0) {
        return Err(Error::InvalidArgument(format!("needle force {force} must be >= 0")));
    }
    Ok([JOINT4_LEVER * force, JOINT5_LEVER * force, 0.0])
}

/// Elastic stretch `dL = F L0 / (A E)` of a cable under tension `force`.
pub fn cable_elongation(force: f64, run: &CableRun) -> Result<f64> {
    if !(force.is_finite() && force >= 0.0) {
        return Err(Error::InvalidArgument(format!("cable force {force} must be >= 0")));
    }
    let stiffness = run.cross_section * run.material.tensile_modulus;
    if !(stiffness > 0.0) {
        return Err(Error::InvalidArgument("cable cross-section and modulus must be nonzero".into()));
    }
    Ok(force * run.free_length / stiffness)
}

/// Joint rotation per unit joint torque, `L0 / (2 pi r^2 A E)` in rad/(N m).
///
/// Torque `tau` puts `tau / r` of tension on the cable; its stretch maps to joint
/// motion through `dTheta = dL / (2 pi r)`.
pub fn joint_compliance(run: &CableRun) -> Result<f64> {
    if !(run.drive_pulley_radius > 0.0) {
        return Err(Error::InvalidArgument("drive pulley radius must be positive".into()));
    }
    run.validate()?;
    let r = run.drive_pulley_radius;
    let per_newton = cable_elongation(1.0, run)?;
    Ok(per_newton / (2.0 * PI * r * r))
}

/// Tip stiffness in N/mm for a force perpendicular to a lever of length `lever`
/// about joint 4, using the small-angle tip motion `delta = lever * dTheta`.
pub fn endeffector_stiffness(run: &CableRun, lever: f64) -> Result<f64> {
    if !(lever.is_finite() && lever > 0.0) {
        return Err(Error::InvalidArgument(format!("lever {lever} must be positive")));
    }
    let compliance = joint_compliance(run)?;
    let newton_per_metre = 1.0 / (lever * lever * compliance);
    Ok(newton_per_metre * 1e-3)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadRating {
    /// Static load rating of the idler-pulley bearings (N).
    pub bearing_static_rating: f64,
    /// Torque limits for joints 4, 5, 6 at their weakest configuration (N m).
    pub joint_torque_limits: [f64; 3],
    /// Axial force limit for the needle joint (N).
    pub joint7_force_limit: f64,
}

impl Default for LoadRating {
    fn default() -> Self {
        Self {
            bearing_static_rating: 177.8,
            joint_torque_limits: [2.49, 1.25, 1.25],
            joint7_force_limit: 177.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointVerdict {
    /// 1-based joint label (4, 5, 6 or 7).
    pub joint: usize,
    pub demand: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub joints: Vec<JointVerdict>,
    /// Additive allowance applied to every torque demand (N m).
    pub torque_margin: f64,
}

impl LoadReport {
    pub fn all_pass(&self) -> bool {
        self.joints.iter().all(|j| j.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &JointVerdict> {
        self.joints.iter().filter(|j| !j.pass)
    }
}

/// Checks torque demands on joints 4-6 and the needle force on joint 7.
pub fn check_load_rating(torques: [f64; 3], needle_force: f64, rating: &LoadRating) -> LoadReport {
    check_load_rating_with_margin(torques, needle_force, rating, 0.0)
}

/// As [`check_load_rating`], adding `torque_margin` to each torque demand.
pub fn check_load_rating_with_margin(
    torques: [f64; 3],
    needle_force: f64,
    rating: &LoadRating,
    torque_margin: f64,
) -> LoadReport {
    let mut joints: Vec<JointVerdict> = torques
        .iter()
        .zip(rating.joint_torque_limits)
        .enumerate()
        .map(|(i, (&tau, limit))| {
            let demand = tau.abs() + torque_margin;
            JointVerdict {
                joint: i + 4,
                demand,
                limit,
                pass: demand.is_finite() && demand <= limit,
            }
        })
        .collect();
    let demand = needle_force.abs();
    joints.push(JointVerdict {
        joint: 7,
        demand,
        limit: rating.joint7_force_limit,
        pass: demand.is_finite() && demand <= rating.joint7_force_limit,
    });
    LoadReport { joints, torque_margin }
}

/// Everything the `statics` command prints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticsReport {
    pub needle_force: f64,
    pub torque_bounds: [f64; 3],
    pub cable: CableRun,
    pub joint_compliance: f64,
    pub lever: f64,
    /// N/mm.
    pub stiffness: f64,
    /// mm/N.
    pub deflection_per_newton: f64,
    pub rating: LoadReport,
    pub rating_with_gravity: LoadReport,
}

impl StaticsReport {
    pub fn compute(needle_force: f64, cable: &CableRun, lever: f64, rating: &LoadRating) -> Result<Self> {
        let torque_bounds = needle_torque_bounds(needle_force)?;
        let compliance = joint_compliance(cable)?;
        let stiffness = endeffector_stiffness(cable, lever)?;
        Ok(Self {
            needle_force,
            torque_bounds,
            cable: cable.clone(),
            joint_compliance: compliance,
            lever,
            stiffness,
            deflection_per_newton: 1.0 / stiffness,
            rating: check_load_rating(torque_bounds, needle_force, rating),
            rating_with_gravity: check_load_rating_with_margin(
                torque_bounds,
                needle_force,
                rating,
                GRAVITY_TORQUE_BOUND,
            ),
        })
    }
}

impl fmt::Display for StaticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [t4, t5, t6] = self.torque_bounds;
        writeln!(f, "needle force              {} N", self.needle_force)?;
        writeln!(f, "torque bounds (q4,q5,q6)  ({t4}, {t5}, {t6}) N·m")?;
        writeln!(
            f,
            "cable                     {} E={} GPa L0={} m A={} mm² r={} mm",
            self.cable.material.name,
            self.cable.material.tensile_modulus * 1e-9,
            self.cable.free_length,
            self.cable.cross_section * 1e6,
            self.cable.drive_pulley_radius * 1e3
        )?;
        writeln!(f, "joint compliance          {:.6e} rad/(N·m)", self.joint_compliance)?;
        writeln!(f, "lever                     {} m", self.lever)?;
        writeln!(f, "tip stiffness             {:.4} N/mm", self.stiffness)?;
        writeln!(f, "tip deflection            {:.4} mm/N", self.deflection_per_newton)?;
        writeln!(f)?;
        writeln!(f, "joint  demand      limit      verdict  (+{} N·m gravity)", GRAVITY_TORQUE_BOUND)?;
        for (plain, grav) in self.rating.joints.iter().zip(&self.rating_with_gravity.joints) {
            let unit = if plain.joint == 7 { "N" } else { "N·m" };
            writeln!(
                f,
                "q{}     {:<10} {:<10} {:<8} {}  {unit}",
                plain.joint,
                plain.demand,
                plain.limit,
                if plain.pass { "pass" } else { "FAIL" },
                if grav.pass { "pass" } else { "FAIL" },
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biopsy_torque_bounds() {
        assert_eq!(needle_torque_bounds(8.0).unwrap(), [1.28, 0.64, 0.0]);
        assert_eq!(needle_torque_bounds(0.0).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(needle_torque_bounds(4.0).unwrap(), [0.64, 0.32, 0.0]);
        assert!(needle_torque_bounds(-1.0).is_err());
        assert!(needle_torque_bounds(f64::NAN).is_err());
    }

    #[test]
    fn catalog_matches_table() {
        let cat = cable_catalog();
        let names: Vec<_> = cat.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["SK99", "DM20", "Vectran", "SS"]);
        let summary: Vec<_> = cat
            .iter()
            .map(|c| (c.tensile_modulus, c.tensile_strength, c.dd_ratio))
            .collect();
        assert_eq!(
            summary,
            [
                (155e9, 4.1e9, 5.0),
                (94e9, 3.4e9, 8.0),
                (103e9, 3e9, 8.0),
                (210e9, 2e9, 18.0)
            ]
        );
        assert_eq!(cat[0].creep_resistance, CreepResistance::Fair);
        assert_eq!(cat[3].sourcing, Sourcing::Easy);
    }

    fn unit_run() -> CableRun {
        CableRun {
            material: cable_catalog().remove(0),
            free_length: 1.0,
            cross_section: 1e-6,
            drive_pulley_radius: 0.01,
        }
    }

    #[test]
    fn elongation_arithmetic() {
        let run = unit_run();
        let dl = cable_elongation(155.0, &run).unwrap();
        assert!((dl - 1e-3).abs() < 1e-18);
        assert_eq!(cable_elongation(0.0, &run).unwrap(), 0.0);
        let d1 = cable_elongation(10.0, &run).unwrap();
        let d2 = cable_elongation(20.0, &run).unwrap();
        assert!((d2 - 2.0 * d1).abs() < 1e-18);
        let mut bad = run.clone();
        bad.cross_section = 0.0;
        assert!(cable_elongation(1.0, &bad).is_err());
    }

    #[test]
    fn compliance_scaling() {
        let run = unit_run();
        let base = joint_compliance(&run).unwrap();
        let mut wide = run.clone();
        wide.drive_pulley_radius *= 2.0;
        assert!((joint_compliance(&wide).unwrap() - base / 4.0).abs() < 1e-15 * base);
        let mut stiff = run.clone();
        stiff.material.tensile_modulus *= 10.0;
        assert!((joint_compliance(&stiff).unwrap() - base / 10.0).abs() < 1e-15 * base);
        let mut zero_r = run;
        zero_r.drive_pulley_radius = 0.0;
        assert!(joint_compliance(&zero_r).is_err());
    }

    #[test]
    fn default_run_compliance_by_hand() {
        let run = CableRun::calibrated_default();
        // L0 / (2 pi r^2 A E) = 1.2 / (2 pi * 1e-4 * 0.5e-6 * 155e9)
        let expected = 1.2 / (2.0 * PI * 1e-4 * 0.5e-6 * 155e9);
        let got = joint_compliance(&run).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn stiffness_scaling_and_units() {
        let run = CableRun::calibrated_default();
        let k = endeffector_stiffness(&run, JOINT4_LEVER).unwrap();
        let c = joint_compliance(&run).unwrap();
        let k_newton_per_metre = 1.0 / (JOINT4_LEVER * JOINT4_LEVER * c);
        assert!((k - 1e-3 * k_newton_per_metre).abs() < 1e-12);
        let mut short = run.clone();
        short.free_length /= 2.0;
        let k_short = endeffector_stiffness(&short, JOINT4_LEVER).unwrap();
        assert!((k_short - 2.0 * k).abs() < 1e-12 * k);
        assert!(endeffector_stiffness(&run, 0.0).is_err());
    }

    #[test]
    fn load_rating_verdicts() {
        let rating = LoadRating::default();
        assert!(check_load_rating([1.28, 0.64, 0.0], 8.0, &rating).all_pass());
        assert!(check_load_rating([0.0; 3], 0.0, &rating).all_pass());
        let report = check_load_rating([3.0, 0.0, 0.0], 0.0, &rating);
        let failed: Vec<_> = report.failures().map(|j| j.joint).collect();
        assert_eq!(failed, [4]);
        let heavy = check_load_rating([0.0; 3], 200.0, &rating);
        assert_eq!(heavy.failures().map(|j| j.joint).collect::<Vec<_>>(), [7]);
    }

    #[test]
    fn report_renders() {
        let report = StaticsReport::compute(
            8.0,
            &CableRun::calibrated_default(),
            JOINT4_LEVER,
            &LoadRating::default(),
        )
        .unwrap();
        let text = report.to_string();
        assert!(text.contains("(1.28, 0.64, 0)"), "{text}");
    }
}
