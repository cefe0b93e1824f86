//! Collision world for the arm inside the CT bore.
//!
//! Everything here lives in the bore frame: origin on the bore axis at the gantry
//! mid-plane, z along the axis toward the patient's feet, x pointing up (anterior)
//! and y lateral. The robot base (DH frame 0) sits in this frame at `Scene::mount`.

pub mod geometry;

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kinematics::{JointVector, KinematicChain, Pose, NUM_FRAMES};
pub use geometry::{capsule_clearance, segment_segment_distance, Aabb, Bore, Capsule};

type V3 = Vector3<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCapsule {
    pub name: String,
    #[serde(flatten)]
    pub capsule: Capsule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `None` is an unbounded opening: no wall to hit.
    pub bore: Option<Bore>,
    pub patient: Vec<NamedCapsule>,
    pub table: Option<Aabb>,
    /// Robot frame 0 expressed in the bore frame.
    pub mount: Pose,
    /// Box selecting the patient vertices over the lungs.
    pub lung_region: Option<Aabb>,
    /// Optional patient surface mesh vertices used as binning targets.
    pub patient_vertices: Option<Vec<V3>>,
    /// Test non-adjacent robot links against each other.
    pub self_collision: bool,
}

impl Scene {
    /// No bore wall, no patient, no table and no self-collision test.
    pub fn empty() -> Self {
        Self {
            bore: None,
            patient: Vec::new(),
            table: None,
            mount: Pose::identity(),
            lung_region: None,
            patient_vertices: None,
            self_collision: false,
        }
    }

    /// 65 cm bore, an adult dummy lying supine on the table with the head toward
    /// the robot, and the arm's wrist base hanging above the upper chest.
    pub fn biopsy_suite() -> Self {
        let capsule = |name: &str, a: [f64; 3], b: [f64; 3], radius: f64| NamedCapsule {
            name: name.to_string(),
            capsule: Capsule::new(V3::from(a), V3::from(b), radius),
        };
        Self {
            bore: Some(Bore {
                inner_radius: 0.325,
                length: 0.9,
            }),
            patient: vec![
                capsule("torso", [-0.02, 0.0, -0.25], [-0.02, 0.0, 0.30], 0.14),
                capsule("head", [-0.06, 0.0, -0.56], [-0.06, 0.0, -0.50], 0.10),
                capsule("left_arm", [-0.11, 0.20, -0.30], [-0.11, 0.20, 0.30], 0.05),
                capsule("right_arm", [-0.11, -0.20, -0.30], [-0.11, -0.20, 0.30], 0.05),
                capsule("legs", [-0.05, 0.0, 0.45], [-0.05, 0.0, 1.25], 0.11),
            ],
            table: Some(Aabb {
                min: V3::new(-0.22, -0.22, -1.2),
                max: V3::new(-0.16, 0.22, 1.5),
            }),
            mount: Pose::from_translation(V3::new(0.22, 0.15, -0.35)),
            lung_region: Some(Aabb {
                min: V3::new(0.0, -0.14, -0.22),
                max: V3::new(0.2, 0.14, 0.05),
            }),
            patient_vertices: None,
            self_collision: true,
        }
    }

    pub fn without_patient(&self) -> Self {
        Self {
            patient: Vec::new(),
            ..self.clone()
        }
    }

    /// Binning targets: the explicit vertex list when present, otherwise points on
    /// the upward-facing half of every patient capsule's cylindrical surface.
    pub fn targets(&self) -> Vec<V3> {
        match &self.patient_vertices {
            Some(v) => v.clone(),
            None => self.surface_vertices(0.02),
        }
    }

    /// Vertices on the anterior half of each patient capsule, spaced about `spacing`
    /// apart along the axis and around the circumference.
    pub fn surface_vertices(&self, spacing: f64) -> Vec<V3> {
        let mut out = Vec::new();
        for part in &self.patient {
            let c = &part.capsule;
            let axis = c.b - c.a;
            let len = axis.norm();
            if len <= 0.0 {
                continue;
            }
            let dir = axis / len;
            // Up-facing reference direction perpendicular to the axis.
            let up = (V3::x() - dir * dir.x).try_normalize(1e-9).unwrap_or_else(V3::y);
            let side = dir.cross(&up);
            let n_axial = (len / spacing).round().max(1.0) as usize;
            let n_arc = ((PI * c.radius) / spacing).round().max(1.0) as usize;
            for i in 0..=n_axial {
                let base = c.a + dir * (len * i as f64 / n_axial as f64);
                for j in 0..=n_arc {
                    let phi = -PI / 2.0 + PI * j as f64 / n_arc as f64;
                    out.push(base + (up * phi.cos() + side * phi.sin()) * c.radius);
                }
            }
        }
        out
    }

    pub fn lung_targets(&self, targets: &[V3]) -> Vec<usize> {
        match &self.lung_region {
            Some(region) => (0..targets.len())
                .filter(|&i| region.point_distance(&targets[i]) == 0.0)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Point in the robot base frame expressed in the bore frame.
    pub fn to_bore(&self, p: &V3) -> V3 {
        self.mount.transform_point(p)
    }

    pub fn to_robot(&self, p: &V3) -> V3 {
        self.mount.inverse().transform_point(p)
    }
}

/// Capsule spanning a point fixed in one DH frame and a point fixed in another.
/// Frame 0 is the robot base; 1..=8 are the DH frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkCapsule {
    pub name: String,
    pub frame_a: usize,
    pub point_a: V3,
    pub frame_b: usize,
    pub point_b: V3,
    pub radius: f64,
    /// Counts toward the in-bore frontal cross-section.
    #[serde(default)]
    pub in_bore: bool,
}

/// Robot collision geometry, listed proximal to distal. Consecutive links share a
/// joint and are never tested against each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub links: Vec<LinkCapsule>,
}

impl RobotBody {
    /// Carbon tube running back out of the bore from the wrist base, the two wrist
    /// links, the needle carriage and a 1.6 mm needle.
    pub fn biopsy_arm() -> Self {
        let link = |name: &str, fa: usize, pa: [f64; 3], fb: usize, pb: [f64; 3], radius: f64, in_bore: bool| {
            LinkCapsule {
                name: name.to_string(),
                frame_a: fa,
                point_a: V3::from(pa),
                frame_b: fb,
                point_b: V3::from(pb),
                radius,
                in_bore,
            }
        };
        let origin = [0.0; 3];
        Self {
            links: vec![
                link("tube", 3, [0.0, 0.0, -1.2], 3, origin, 0.02, true),
                link("wrist_proximal", 4, origin, 5, origin, 0.02, true),
                link("wrist_distal", 5, origin, 6, origin, 0.02, true),
                link("needle_carriage", 6, origin, 7, origin, 0.012, false),
                link("needle", 7, origin, 8, origin, 0.0008, false),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.links {
            if l.frame_a > NUM_FRAMES || l.frame_b > NUM_FRAMES {
                return Err(crate::Error::Model(format!("link {} references a frame above {NUM_FRAMES}", l.name)));
            }
            if !(l.radius.is_finite() && l.radius > 0.0) {
                return Err(crate::Error::Model(format!("link {} needs a positive radius", l.name)));
            }
        }
        Ok(())
    }

    pub fn inflated(&self, delta: f64) -> Self {
        Self {
            links: self
                .links
                .iter()
                .map(|l| LinkCapsule {
                    radius: l.radius + delta,
                    ..l.clone()
                })
                .collect(),
        }
    }

    /// Link index pairs skipped by the self-collision test.
    pub fn excluded_pairs(&self) -> Vec<(usize, usize)> {
        (1..self.links.len()).map(|j| (j - 1, j)).collect()
    }

    /// Link capsules in the bore frame for the given DH frame poses (frame 1 first).
    pub fn posed(&self, frames: &[Pose; NUM_FRAMES], mount: &Pose) -> Vec<Capsule> {
        let frame_pose = |k: usize| if k == 0 { *mount } else { mount * &frames[k - 1] };
        self.links
            .iter()
            .map(|l| {
                Capsule::new(
                    frame_pose(l.frame_a).transform_point(&l.point_a),
                    frame_pose(l.frame_b).transform_point(&l.point_b),
                    l.radius,
                )
            })
            .collect()
    }

    /// Width and height (m) of the bounding box of the `in_bore` links projected on
    /// the plane perpendicular to the bore axis.
    pub fn frontal_cross_section(&self, chain: &KinematicChain, q: &JointVector, mount: &Pose) -> Result<(f64, f64)> {
        let frames = chain.frames(q)?;
        let capsules = self.posed(&frames, mount);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for (link, cap) in self.links.iter().zip(&capsules) {
            if !link.in_bore {
                continue;
            }
            for p in [cap.a, cap.b] {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k] - cap.radius);
                    hi[k] = hi[k].max(p[k] + cap.radius);
                }
            }
        }
        Ok((hi[0] - lo[0], hi[1] - lo[1]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum BodyId {
    Link(usize),
    Patient(usize),
    Bore,
    Table,
}

impl fmt::Display for BodyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyId::Link(i) => write!(f, "link[{i}]"),
            BodyId::Patient(i) => write!(f, "patient[{i}]"),
            BodyId::Bore => f.write_str("bore"),
            BodyId::Table => f.write_str("table"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub a: BodyId,
    pub b: BodyId,
    /// Penetration depth in metres.
    pub depth: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub in_collision: bool,
    pub pairs: Vec<CollisionPair>,
}

impl CollisionReport {
    pub fn involves(&self, a: BodyId, b: BodyId) -> bool {
        self.pairs
            .iter()
            .any(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

/// Every overlapping pair between the posed robot and the environment, plus
/// non-adjacent robot self pairs.
pub fn check_collision(scene: &Scene, body: &RobotBody, chain: &KinematicChain, q: &JointVector) -> Result<CollisionReport> {
    let frames = chain.frames(q)?;
    let mut pairs = Vec::new();
    visit_contacts(scene, body, &frames, &mut |pair| {
        pairs.push(pair);
        true
    });
    Ok(CollisionReport {
        in_collision: !pairs.is_empty(),
        pairs,
    })
}

/// Early-exit variant of [`check_collision`] for frames that are already posed.
pub fn collides_at(scene: &Scene, body: &RobotBody, frames: &[Pose; NUM_FRAMES]) -> bool {
    let mut hit = false;
    visit_contacts(scene, body, frames, &mut |_| {
        hit = true;
        false
    });
    hit
}

/// Calls `sink` for each contact; stops when `sink` returns false.
fn visit_contacts(
    scene: &Scene,
    body: &RobotBody,
    frames: &[Pose; NUM_FRAMES],
    sink: &mut dyn FnMut(CollisionPair) -> bool,
) {
    let links = body.posed(frames, &scene.mount);
    for (i, link) in links.iter().enumerate() {
        for (j, part) in scene.patient.iter().enumerate() {
            let clearance = capsule_clearance(link, &part.capsule);
            if clearance < 0.0
                && !sink(CollisionPair {
                    a: BodyId::Link(i),
                    b: BodyId::Patient(j),
                    depth: -clearance,
                })
            {
                return;
            }
        }
        if let Some(depth) = scene.bore.and_then(|b| b.penetration(link)) {
            if depth > 0.0
                && !sink(CollisionPair {
                    a: BodyId::Link(i),
                    b: BodyId::Bore,
                    depth,
                })
            {
                return;
            }
        }
        if let Some(table) = &scene.table {
            let depth = link.radius - table.segment_distance(&link.a, &link.b);
            if depth > 0.0
                && !sink(CollisionPair {
                    a: BodyId::Link(i),
                    b: BodyId::Table,
                    depth,
                })
            {
                return;
            }
        }
    }
    if !scene.self_collision {
        return;
    }
    for i in 0..links.len() {
        for j in (i + 2)..links.len() {
            let clearance = capsule_clearance(&links[i], &links[j]);
            if clearance < 0.0
                && !sink(CollisionPair {
                    a: BodyId::Link(i),
                    b: BodyId::Link(j),
                    depth: -clearance,
                })
            {
                return;
            }
        }
    }
}
