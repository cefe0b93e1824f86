//! Robot model and scene files (TOML).
//!
//! The robot model file carries the DH table, joint limits, mixing matrix, encoder
//! and the statics parameters. Angle fields accept either a number of radians or a
//! string multiple of pi such as `"pi/2"`, `"-pi"` or `"3*pi/4"`.
//! See `data/robot.toml` and `data/scene.toml` for the annotated defaults.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{so3, DhRow, DhTable, JointLimits, JointType, KinematicChain, Pose, NUM_JOINTS};
use crate::scene::{Aabb, Bore, LinkCapsule, NamedCapsule, RobotBody, Scene};
use crate::statics::{CableMaterial, CableRun, LoadRating, JOINT4_LEVER};
use crate::transmission::{EncoderSpec, MixingMatrix};

pub const DEFAULT_ROBOT_TOML: &str = include_str!("../data/robot.toml");
pub const DEFAULT_SCENE_TOML: &str = include_str!("../data/scene.toml");

/// Radians, written as a number or as a multiple of pi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AngleRepr", into = "f64")]
pub struct Angle(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum AngleRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<AngleRepr> for Angle {
    type Error = String;
    fn try_from(repr: AngleRepr) -> std::result::Result<Self, String> {
        match repr {
            AngleRepr::Number(v) => Ok(Angle(v)),
            AngleRepr::Text(s) => parse_angle(&s).map(Angle),
        }
    }
}

impl From<Angle> for f64 {
    fn from(a: Angle) -> f64 {
        a.0
    }
}

/// Parses `[-][k*]pi[/n]` or a plain number.
pub fn parse_angle(text: &str) -> std::result::Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(&s)),
    };
    let bad = || format!("cannot parse angle {text:?}");
    let (coeff, rest) = match body.split_once('*') {
        Some((k, rest)) => (k.parse::<f64>().map_err(|_| bad())?, rest),
        None => (1.0, body),
    };
    let rest = rest.strip_prefix("pi").ok_or_else(bad)?;
    let divisor = if rest.is_empty() {
        1.0
    } else {
        rest.strip_prefix('/').ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?
    };
    if divisor == 0.0 {
        return Err(bad());
    }
    // Keep pi/2 bit-identical to std::f64::consts::FRAC_PI_2.
    Ok(sign * coeff * (PI / divisor))
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DhRowSpec {
    pub frame: usize,
    #[serde(rename = "type")]
    pub joint_type: JointType,
    pub a: f64,
    pub alpha: Angle,
    pub d: f64,
    pub theta: Angle,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub lower: [Angle; NUM_JOINTS],
    pub upper: [Angle; NUM_JOINTS],
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    pub rows: [[f64; NUM_JOINTS]; NUM_JOINTS],
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CableRunSpec {
    pub material: String,
    pub free_length: f64,
    pub cross_section: f64,
    pub drive_pulley_radius: f64,
    #[serde(default = "default_lever")]
    pub lever: f64,
}

fn default_lever() -> f64 {
    JOINT4_LEVER
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StaticsSpec {
    pub cable_materials: Vec<CableMaterial>,
    pub cable_run: CableRunSpec,
    pub load_rating: LoadRating,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModelFile {
    pub dh: Vec<DhRowSpec>,
    pub limits: LimitsSpec,
    pub mixing: MixingSpec,
    pub encoder: EncoderSpec,
    pub statics: StaticsSpec,
}

/// Everything loaded from a robot model file, validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub chain: KinematicChain,
    pub mixing: MixingMatrix,
    pub encoder: EncoderSpec,
    pub cable_materials: Vec<CableMaterial>,
    pub cable_run: CableRun,
    pub lever: f64,
    pub load_rating: LoadRating,
}

impl RobotModel {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RobotModelFile = toml::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        Self::from_file_spec(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// The shipped model.
    pub fn biopsy_arm() -> Self {
        Self::from_toml(DEFAULT_ROBOT_TOML).expect("shipped robot model is valid")
    }

    fn from_file_spec(file: RobotModelFile) -> Result<Self> {
        let mut rows = Vec::with_capacity(file.dh.len());
        for (i, spec) in file.dh.iter().enumerate() {
            if spec.frame != i + 1 {
                return Err(Error::Model(format!(
                    "DH rows must be listed in frame order; row {} is labelled frame {}",
                    i + 1,
                    spec.frame
                )));
            }
            // For the variable joint the listed d or theta is the constant offset.
            rows.push(DhRow::new(spec.joint_type, spec.a, spec.alpha.0, spec.d, spec.theta.0));
        }
        let dh = DhTable::new(rows)?;
        let limits = JointLimits::new(
            file.limits.lower.map(|a| a.0),
            file.limits.upper.map(|a| a.0),
        )?;
        let chain = KinematicChain::new(dh, limits)?;
        let mixing = MixingMatrix::try_from(file.mixing.rows)?;
        if file.encoder.counts_per_motor_rev == 0 || file.encoder.gear_ratio == 0 {
            return Err(Error::Model("encoder counts and gear ratio must be nonzero".into()));
        }
        for m in &file.statics.cable_materials {
            m.validate()?;
        }
        let run_spec = &file.statics.cable_run;
        let material = file
            .statics
            .cable_materials
            .iter()
            .find(|m| m.name == run_spec.material)
            .cloned()
            .ok_or_else(|| Error::Model(format!("cable material {} not in catalog", run_spec.material)))?;
        let cable_run = CableRun {
            material,
            free_length: run_spec.free_length,
            cross_section: run_spec.cross_section,
            drive_pulley_radius: run_spec.drive_pulley_radius,
        };
        cable_run.validate()?;
        Ok(Self {
            chain,
            mixing,
            encoder: file.encoder,
            cable_materials: file.statics.cable_materials,
            cable_run,
            lever: run_spec.lever,
            load_rating: file.statics.load_rating,
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MountSpec {
    pub position: [f64; 3],
    /// Intrinsic X-Y-Z angles of the robot base in the bore frame.
    #[serde(default)]
    pub rpy: [Angle; 3],
}

impl Default for Angle {
    fn default() -> Self {
        Angle(0.0)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<&BoxSpec> for Aabb {
    fn from(b: &BoxSpec) -> Self {
        Aabb {
            min: Vector3::from(b.min),
            max: Vector3::from(b.max),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub bore: Option<Bore>,
    pub mount: MountSpec,
    pub table: Option<BoxSpec>,
    #[serde(default)]
    pub patient: Vec<NamedCapsule>,
    pub lung_region: Option<BoxSpec>,
    /// Path to a vertex list, relative to the scene file.
    pub vertices_file: Option<String>,
    #[serde(default)]
    pub robot_link: Vec<LinkCapsule>,
    #[serde(default = "default_true")]
    pub self_collision: bool,
}

fn default_true() -> bool {
    true
}

impl SceneFile {
    /// Builds the scene and robot body. `base_dir` resolves `vertices_file`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<(Scene, RobotBody)> {
        let rpy = Vector3::new(self.mount.rpy[0].0, self.mount.rpy[1].0, self.mount.rpy[2].0);
        let mount = Pose::new(Vector3::from(self.mount.position), so3::euler_xyz(&rpy));
        if let Some(bore) = &self.bore {
            if !(bore.inner_radius > 0.0 && bore.length > 0.0) {
                return Err(Error::Model("bore radius and length must be positive".into()));
            }
        }
        for p in &self.patient {
            if !(p.capsule.radius > 0.0) {
                return Err(Error::Model(format!("patient capsule {} needs a positive radius", p.name)));
            }
        }
        let patient_vertices = match &self.vertices_file {
            Some(rel) => {
                let path = base_dir.map(|d| d.join(rel)).unwrap_or_else(|| rel.into());
                Some(read_vertices(&path)?)
            }
            None => None,
        };
        let body = RobotBody {
            links: self.robot_link.clone(),
        };
        body.validate()?;
        let scene = Scene {
            bore: self.bore,
            patient: self.patient.clone(),
            table: self.table.as_ref().map(Aabb::from),
            mount,
            lung_region: self.lung_region.as_ref().map(Aabb::from),
            patient_vertices,
            self_collision: self.self_collision,
        };
        Ok((scene, body))
    }
}

pub fn scene_from_toml(text: &str, base_dir: Option<&Path>) -> Result<(Scene, RobotBody)> {
    let file: SceneFile = toml::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    file.build(base_dir)
}

pub fn load_scene(path: &Path) -> Result<(Scene, RobotBody)> {
    let text = std::fs::read_to_string(path)?;
    scene_from_toml(&text, path.parent())
}

/// The shipped scene and robot body.
pub fn default_scene() -> (Scene, RobotBody) {
    scene_from_toml(DEFAULT_SCENE_TOML, None).expect("shipped scene is valid")
}

/// Parses a vertex list: one `x y z` triple per line (commas also accepted);
/// blank lines and `#` comments are skipped.
pub fn parse_vertices(text: &str) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match values {
            Ok(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => out.push(Vector3::new(v[0], v[1], v[2])),
            _ => {
                return Err(Error::Model(format!("vertex line {}: expected three numbers", n + 1)));
            }
        }
    }
    Ok(out)
}

pub fn read_vertices(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse_vertices(&std::fs::read_to_string(path)?)
}
