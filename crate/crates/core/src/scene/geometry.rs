//! Distance queries between segments, capsules, boxes and the bore cylinder.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

type V3 = Vector3<f64>;

const EPS: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: V3,
    pub b: V3,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: V3, b: V3, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn inflated(&self, delta: f64) -> Self {
        Self {
            radius: self.radius + delta,
            ..*self
        }
    }
}

/// Closest points between segments `p1-q1` and `p2-q2`, returned as the segment
/// parameters `(s, t)` in [0, 1] and the points themselves.
pub fn closest_points_segments(p1: &V3, q1: &V3, p2: &V3, q2: &V3) -> (f64, f64, V3, V3) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (s, t, c1, c2)
}

/// Minimum distance between the closed segments `p1-p2` and `p3-p4`.
/// Zero-length segments behave as points.
pub fn segment_segment_distance(p1: &V3, p2: &V3, p3: &V3, p4: &V3) -> f64 {
    let (_, _, c1, c2) = closest_points_segments(p1, p2, p3, p4);
    (c1 - c2).norm()
}

pub fn point_segment_distance(p: &V3, a: &V3, b: &V3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 <= EPS {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

/// Signed clearance between two capsules: negative when they overlap.
pub fn capsule_clearance(c1: &Capsule, c2: &Capsule) -> f64 {
    segment_segment_distance(&c1.a, &c1.b, &c2.a, &c2.b) - c1.radius - c2.radius
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: V3,
    pub max: V3,
}

impl Aabb {
    pub fn point_distance(&self, p: &V3) -> f64 {
        let d = V3::from_fn(|i, _| (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]));
        d.norm()
    }

    /// Distance from the segment to the box. The point-to-box distance is convex
    /// along the segment, so a golden-section search finds the minimum.
    pub fn segment_distance(&self, a: &V3, b: &V3) -> f64 {
        let f = |t: f64| self.point_distance(&(a + (b - a) * t));
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..80 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = f(x2);
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        f(0.0).min(f(1.0)).min(f(0.5 * (lo + hi)))
    }
}

/// Hollow cylinder along the z axis of the bore frame, centred on the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bore {
    pub inner_radius: f64,
    /// Tunnel length along z; the wall spans `|z| <= length / 2`.
    pub length: f64,
}

impl Bore {
    /// How far the capsule pokes through the inner wall (positive) or its clearance
    /// to the wall (negative). Only the part of the segment inside the tunnel counts;
    /// `None` when the segment is entirely outside it.
    pub fn penetration(&self, capsule: &Capsule) -> Option<f64> {
        let half = 0.5 * self.length;
        let (a, b) = (capsule.a, capsule.b);
        let dz = b.z - a.z;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        if dz.abs() <= EPS {
            if a.z.abs() > half {
                return None;
            }
        } else {
            let ta = (-half - a.z) / dz;
            let tb = (half - a.z) / dz;
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
            if t0 > t1 {
                return None;
            }
        }
        // Radial distance is convex along the segment, so its maximum sits at an end.
        let radial = |t: f64| {
            let p = a + (b - a) * t;
            p.x.hypot(p.y)
        };
        Some(radial(t0).max(radial(t1)) + capsule.radius - self.inner_radius)
    }
}
