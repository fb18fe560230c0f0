//! 2D geometry: vectors, poses, polylines, oriented boxes.
//!
//! World frame: x east, y north, yaw counter-clockwise from +x.
//! Ego frame: v forward along the heading, u lateral-right.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 1e-12 {
            self.scale(1.0 / n)
        } else {
            Vec2::ZERO
        }
    }
}

/// World-frame pose of an actor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            position: Vec2::new(x, y),
            yaw,
        }
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }

    /// Unit vector pointing to the vehicle's right.
    pub fn right(&self) -> Vec2 {
        Vec2::new(self.yaw.sin(), -self.yaw.cos())
    }

    /// World point → (u lateral-right, v forward) in this pose's frame.
    pub fn world_to_ego(&self, p: Vec2) -> (f64, f64) {
        let r = p.sub(self.position);
        (r.dot(self.right()), r.dot(self.forward()))
    }

    /// (u, v) in this pose's frame → world point.
    pub fn ego_to_world(&self, u: f64, v: f64) -> Vec2 {
        self.position
            .add(self.right().scale(u))
            .add(self.forward().scale(v))
    }
}

/// Distance from point to segment, and the projection parameter in [0,1].
pub fn point_segment(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 1e-12 {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let proj = a.add(ab.scale(t));
    (p.dist(proj), t)
}

/// Whether segments p1p2 and p3p4 intersect (inclusive of endpoints).
pub fn segments_intersect(p1: Vec2, p2: Vec2, p3: Vec2, p4: Vec2) -> bool {
    fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
        (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
    }
    fn on_segment(a: Vec2, b: Vec2, c: Vec2) -> bool {
        c.x >= a.x.min(b.x) - 1e-12
            && c.x <= a.x.max(b.x) + 1e-12
            && c.y >= a.y.min(b.y) - 1e-12
            && c.y <= a.y.max(b.y) + 1e-12
    }
    let d1 = orient(p3, p4, p1);
    let d2 = orient(p3, p4, p2);
    let d3 = orient(p1, p2, p3);
    let d4 = orient(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

/// Oriented bounding box: center, yaw, half extents (along heading, lateral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, yaw: f64, half_length: f64, half_width: f64) -> Self {
        Obb {
            center,
            yaw,
            half_length,
            half_width,
        }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::new(self.yaw.cos(), self.yaw.sin()).scale(self.half_length);
        let r = Vec2::new(self.yaw.sin(), -self.yaw.cos()).scale(self.half_width);
        [
            self.center.add(f).add(r),
            self.center.add(f).sub(r),
            self.center.sub(f).sub(r),
            self.center.sub(f).add(r),
        ]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for (yaw, _) in [(self.yaw, 0), (other.yaw, 1)] {
            let axes = [
                Vec2::new(yaw.cos(), yaw.sin()),
                Vec2::new(-yaw.sin(), yaw.cos()),
            ];
            for axis in axes {
                let proj = |cs: &[Vec2; 4]| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for c in cs {
                        let d = c.dot(axis);
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                    (lo, hi)
                };
                let (alo, ahi) = proj(&ca);
                let (blo, bhi) = proj(&cb);
                if ahi < blo || bhi < alo {
                    return false;
                }
            }
        }
        true
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let rel = p.sub(self.center).rotated(-self.yaw);
        rel.x.abs() <= self.half_length && rel.y.abs() <= self.half_width
    }
}

/// Piecewise-linear path with cached cumulative arc length.
#[derive(Debug, Clone)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].dist(w[1]);
            cumulative.push(acc);
        }
        Polyline { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Closest point: returns (arc-length position, lateral distance).
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let (d, t) = point_segment(p, self.points[i], self.points[i + 1]);
            if d < best.1 {
                let s = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
                best = (s, d);
            }
        }
        best
    }

    /// Point at arc length s (clamped to the ends).
    pub fn at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => (i - 1).min(self.points.len() - 2),
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 1e-12 {
            (s - self.cumulative[i]) / seg
        } else {
            0.0
        };
        self.points[i].add(self.points[i + 1].sub(self.points[i]).scale(t))
    }

    /// Tangent direction at arc length s.
    pub fn tangent(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => (i - 1).min(self.points.len() - 2),
        };
        self.points[i + 1].sub(self.points[i]).normalized()
    }
}

/// Quadratic Bezier sampled into a polyline segment list (excludes p0).
pub fn bezier_arc(p0: Vec2, ctrl: Vec2, p2: Vec2, samples: usize) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(samples);
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        let mt = 1.0 - t;
        out.push(Vec2::new(
            mt * mt * p0.x + 2.0 * mt * t * ctrl.x + t * t * p2.x,
            mt * mt * p0.y + 2.0 * mt * t * ctrl.y + t * t * p2.y,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn ego_frame_conventions() {
        // facing east (+x): a point north (left) has negative u
        let pose = Pose::new(0.0, 0.0, 0.0);
        let (u, v) = pose.world_to_ego(Vec2::new(2.0, 1.0));
        assert!((v - 2.0).abs() < 1e-12);
        assert!((u + 1.0).abs() < 1e-12);

        // facing north: east is to the right
        let pose = Pose::new(0.0, 0.0, FRAC_PI_2);
        let (u, v) = pose.world_to_ego(Vec2::new(1.0, 3.0));
        assert!((u - 1.0).abs() < 1e-12);
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ego_world_roundtrip() {
        let pose = Pose::new(3.0, -2.0, 0.83);
        let p = Vec2::new(-4.0, 7.0);
        let (u, v) = pose.world_to_ego(p);
        let back = pose.ego_to_world(u, v);
        assert!(back.dist(p) < 1e-12);
    }

    #[test]
    fn obb_overlap_cases() {
        let a = Obb::new(Vec2::ZERO, 0.0, 2.0, 1.0);
        let b = Obb::new(Vec2::new(3.0, 0.0), 0.0, 1.5, 1.0);
        assert!(a.overlaps(&b));
        let c = Obb::new(Vec2::new(3.5, 0.0), 0.0, 1.5, 1.0);
        assert!(a.overlaps(&c)); // touching edge counts
        let d = Obb::new(Vec2::new(6.0, 0.0), 0.0, 1.5, 1.0);
        assert!(!a.overlaps(&d));
        // rotated box slipping between
        let e = Obb::new(Vec2::new(0.0, 2.5), FRAC_PI_2, 2.0, 1.0);
        assert!(a.overlaps(&e));
    }

    #[test]
    fn polyline_projection_and_lookup() {
        let line = Polyline::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(10.0, 10.0),
        ]);
        assert!((line.length() - 20.0).abs() < 1e-12);
        let (s, d) = line.project(Vec2::new(5.0, 2.0));
        assert!((s - 5.0).abs() < 1e-12);
        assert!((d - 2.0).abs() < 1e-12);
        let p = line.at(15.0);
        assert!(p.dist(Vec2::new(10.0, 5.0)) < 1e-12);
        let t = line.tangent(15.0);
        assert!(t.dist(Vec2::new(0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn segment_intersection() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(2.0, 2.0);
        let c = Vec2::new(0.0, 2.0);
        let d = Vec2::new(2.0, 0.0);
        assert!(segments_intersect(a, b, c, d));
        // collinear but disjoint
        let e = Vec2::new(3.0, 3.0);
        let f = Vec2::new(4.0, 4.0);
        assert!(!segments_intersect(a, b, e, f));
        // collinear and overlapping
        let g = Vec2::new(1.0, 1.0);
        assert!(segments_intersect(a, b, g, f));
        // endpoint touching
        assert!(segments_intersect(a, b, b, e));
        assert!(!segments_intersect(c, d, e, f));
    }
}
