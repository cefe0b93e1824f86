//! Monte Carlo reachability study over joints 1-6 and the per-target heat map.
//!
//! Samples are generated in fixed-size chunks. Chunk `c` draws from a ChaCha8
//! stream keyed by `(seed, c)`, so the sample set is a function of the seed and
//! the count only, never of how many worker threads processed it.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointVector, KinematicChain, Pose, NUM_JOINTS, TOOL_FRAME};
use crate::scene::{collides_at, RobotBody, Scene};

type V3 = Vector3<f64>;

pub const DEFAULT_RADIUS: f64 = 5e-3;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const CHUNK_SIZE: usize = 4096;

/// Joints drawn by the study; the insertion joint stays at zero.
pub const SAMPLED_JOINTS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub q: JointVector,
    /// Tool pose in the robot base frame.
    pub tip_pose: Pose,
    pub collision_free: bool,
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunk_len(n: usize, chunk: usize) -> usize {
    CHUNK_SIZE.min(n - chunk * CHUNK_SIZE)
}

fn num_chunks(n: usize) -> usize {
    n.div_ceil(CHUNK_SIZE)
}

fn evaluate_chunk(scene: &Scene, body: &RobotBody, chain: &KinematicChain, n: usize, seed: u64, chunk: usize) -> Vec<SampleRecord> {
    let mut rng = chunk_rng(seed, chunk);
    let (lo, hi) = (&chain.limits.lower, &chain.limits.upper);
    (0..chunk_len(n, chunk))
        .map(|_| {
            let mut q = JointVector::zeros();
            for j in 0..SAMPLED_JOINTS {
                let u: f64 = rng.random();
                q[j] = lo[j] + u * (hi[j] - lo[j]);
            }
            q[NUM_JOINTS - 1] = 0.0;
            let frames = chain.frames_unchecked(&q);
            SampleRecord {
                q,
                tip_pose: frames[TOOL_FRAME - 1],
                collision_free: !collides_at(scene, body, &frames),
            }
        })
        .collect()
}

fn validate_inputs(chain: &KinematicChain, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if chain.limits.lower[NUM_JOINTS - 1] > 0.0 || chain.limits.upper[NUM_JOINTS - 1] < 0.0 {
        return Err(Error::InvalidArgument("insertion joint range must contain 0".into()));
    }
    Ok(())
}

/// `n` uniform samples over the box of joints 1-6, in generation order.
/// Chunks are evaluated lazily, one at a time.
pub fn sample_workspace<'a>(
    scene: &'a Scene,
    body: &'a RobotBody,
    chain: &'a KinematicChain,
    n: usize,
    seed: u64,
) -> Result<impl Iterator<Item = SampleRecord> + 'a> {
    validate_inputs(chain, n)?;
    Ok((0..num_chunks(n)).flat_map(move |c| evaluate_chunk(scene, body, chain, n, seed, c)))
}

/// Same records as [`sample_workspace`], evaluated on the rayon pool and collected.
pub fn sample_workspace_par(scene: &Scene, body: &RobotBody, chain: &KinematicChain, n: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    validate_inputs(chain, n)?;
    let chunks: Vec<Vec<SampleRecord>> = (0..num_chunks(n))
        .into_par_iter()
        .map(|c| evaluate_chunk(scene, body, chain, n, seed, c))
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Buckets target indices on a cubic grid with cell edge `radius`, so every
/// target within `radius` of a point sits in one of the 27 surrounding cells.
struct TargetGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl TargetGrid {
    fn new(targets: &[V3], radius: f64) -> Self {
        let cell = radius.max(1e-9);
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            buckets.entry(Self::key(cell, t)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: &V3) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn for_each_near(&self, p: &V3, mut f: impl FnMut(usize)) {
        let k = Self::key(self.cell, p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        ids.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

fn check_bin_args(targets: &[V3], radius: f64) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets to bin against".into()));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("bin radius must be finite and non-negative, got {radius}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub targets: Vec<V3>,
    pub counts: Vec<u64>,
    pub radius: f64,
}

impl Heatmap {
    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Count as a percentage of the best-covered target; all zero when nothing is reached.
    pub fn percentages(&self) -> Vec<f64> {
        let max = self.max_count();
        self.counts
            .iter()
            .map(|&c| if max == 0 { 0.0 } else { 100.0 * c as f64 / max as f64 })
            .collect()
    }

    /// Same counts with the targets mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> Heatmap {
        Heatmap {
            targets: self.targets.iter().map(|t| pose.transform_point(t)).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,count,percentage\n");
        for ((t, c), pct) in self.targets.iter().zip(&self.counts).zip(self.percentages()) {
            out.push_str(&format!("{:.6},{:.6},{:.6},{},{:.4}\n", t.x, t.y, t.z, c, pct));
        }
        out
    }
}

/// Counts, per target, the collision-free records whose tip lies within `radius`
/// (inclusive). Records and targets must share a frame; in-collision records are skipped.
pub fn bin_reachability<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, targets: &[V3], radius: f64) -> Result<Heatmap> {
    check_bin_args(targets, radius)?;
    let grid = TargetGrid::new(targets, radius);
    let mut counts = vec![0u64; targets.len()];
    let r2 = radius * radius;
    for rec in records.into_iter().filter(|r| r.collision_free) {
        let p = rec.tip_pose.position;
        grid.for_each_near(&p, |i| {
            if (targets[i] - p).norm_squared() <= r2 {
                counts[i] += 1;
            }
        });
    }
    Ok(Heatmap {
        targets: targets.to_vec(),
        counts,
        radius,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachCone {
    /// Needle axes (tool z) of the in-radius collision-free records.
    pub directions: Vec<V3>,
    /// Normalised mean direction; absent for an empty set or when the axes cancel.
    pub mean: Option<V3>,
    /// Largest angle (rad) between any direction and the mean.
    pub half_angle: Option<f64>,
}

impl ApproachCone {
    pub fn from_directions(directions: Vec<V3>) -> Self {
        let sum: V3 = directions.iter().sum();
        let mean = sum.try_normalize(1e-12);
        let half_angle = mean.map(|m| {
            directions
                .iter()
                .map(|d| d.cross(&m).norm().atan2(d.dot(&m)))
                .fold(0.0, f64::max)
        });
        Self {
            directions,
            mean,
            half_angle,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

pub fn approach_cones<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, target: &V3, radius: f64) -> ApproachCone {
    let r2 = radius * radius;
    let directions = records
        .into_iter()
        .filter(|r| r.collision_free && (r.tip_pose.position - target).norm_squared() <= r2)
        .map(|r| r.tip_pose.z_axis())
        .collect();
    ApproachCone::from_directions(directions)
}

pub fn export_heatmap(h: &Heatmap, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(h.to_csv().as_bytes())?;
    Ok(())
}

/// Full study over a scene: targets are given in the bore frame; the heat map is
/// reported in the bore frame too.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub samples: usize,
    pub seed: u64,
    pub radius: f64,
    /// Target indices whose approach directions are collected.
    pub cone_targets: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            radius: DEFAULT_RADIUS,
            cone_targets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub samples: usize,
    pub collision_free: usize,
    pub heatmap: Heatmap,
    /// One cone per entry of `StudyConfig::cone_targets`, in the bore frame.
    pub cones: Vec<(usize, ApproachCone)>,
}

impl StudyResult {
    pub fn collision_free_fraction(&self) -> f64 {
        self.collision_free as f64 / self.samples as f64
    }
}

struct ChunkTally {
    collision_free: usize,
    counts: Vec<u64>,
    directions: Vec<Vec<V3>>,
}

/// Parallel streaming study: records are binned chunk by chunk and never stored.
pub fn run_study(scene: &Scene, body: &RobotBody, chain: &KinematicChain, targets_bore: &[V3], cfg: &StudyConfig) -> Result<StudyResult> {
    validate_inputs(chain, cfg.samples)?;
    check_bin_args(targets_bore, cfg.radius)?;
    if let Some(&bad) = cfg.cone_targets.iter().find(|&&i| i >= targets_bore.len()) {
        return Err(Error::InvalidArgument(format!("cone target {bad} out of range")));
    }
    let targets: Vec<V3> = targets_bore.iter().map(|t| scene.to_robot(t)).collect();
    let grid = TargetGrid::new(&targets, cfg.radius);
    let r2 = cfg.radius * cfg.radius;
    let cone_slot: HashMap<usize, usize> = cfg.cone_targets.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let tally = |c: usize| {
        let records = evaluate_chunk(scene, body, chain, cfg.samples, cfg.seed, c);
        let mut t = ChunkTally {
            collision_free: 0,
            counts: vec![0; targets.len()],
            directions: vec![Vec::new(); cfg.cone_targets.len()],
        };
        for rec in records.iter().filter(|r| r.collision_free) {
            t.collision_free += 1;
            let p = rec.tip_pose.position;
            grid.for_each_near(&p, |i| {
                if (targets[i] - p).norm_squared() <= r2 {
                    t.counts[i] += 1;
                    if let Some(&k) = cone_slot.get(&i) {
                        t.directions[k].push(scene.mount.rotation * rec.tip_pose.z_axis());
                    }
                }
            });
        }
        t
    };
    let chunks: Vec<ChunkTally> = (0..num_chunks(cfg.samples)).into_par_iter().map(tally).collect();

    let mut collision_free = 0;
    let mut counts = vec![0u64; targets.len()];
    let mut directions = vec![Vec::new(); cfg.cone_targets.len()];
    for t in chunks {
        collision_free += t.collision_free;
        counts.iter_mut().zip(&t.counts).for_each(|(a, b)| *a += b);
        directions.iter_mut().zip(t.directions).for_each(|(a, b)| a.extend(b));
    }
    Ok(StudyResult {
        samples: cfg.samples,
        collision_free,
        heatmap: Heatmap {
            targets: targets_bore.to_vec(),
            counts,
            radius: cfg.radius,
        },
        cones: cfg
            .cone_targets
            .iter()
            .copied()
            .zip(directions.into_iter().map(ApproachCone::from_directions))
            .collect(),
    })
}
