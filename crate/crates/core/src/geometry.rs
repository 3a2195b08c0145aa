//! Planar billiard domains: disk, rectangle and stadium.
//!
//! A [`BoundaryCurve`] is a closed, counterclockwise chain of line and arc
//! segments parameterized by arclength. Arclength origins are fixed per
//! shape so grids and caches are reproducible:
//!
//! * disk: the point `(r, 0)`;
//! * stadium: the start `(-a, -r)` of the lower straight, then cap, upper
//!   straight, cap;
//! * rectangle: the corner `(-a, -b)`, then the lower, right, upper and
//!   left sides.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Relative tolerance (in units of `L`) for "this arclength is a corner".
pub const CORNER_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidSpec(String),
    #[error("arclength {s} is a corner; request a one-sided frame")]
    Corner { s: f64 },
}

/// Plain 2-vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    /// Rotation by -90 degrees: the outward normal of a counterclockwise tangent.
    pub fn rot_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}
impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}
impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self * v.x, self * v.y)
    }
}
impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Shape and its length parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Disk { radius: f64 },
    /// Half-sides `a` (along x) and `b` (along y).
    Rectangle { a: f64, b: f64 },
    /// Straight half-length `a`, cap radius `r`.
    Stadium { a: f64, r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub origin: Vec2,
}

impl DomainSpec {
    pub fn disk(radius: f64) -> Self {
        Self { shape: Shape::Disk { radius }, origin: Vec2::default() }
    }
    pub fn rectangle(a: f64, b: f64) -> Self {
        Self { shape: Shape::Rectangle { a, b }, origin: Vec2::default() }
    }
    pub fn stadium(a: f64, r: f64) -> Self {
        Self { shape: Shape::Stadium { a, r }, origin: Vec2::default() }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let params: Vec<(&str, f64)> = match self.shape {
            Shape::Disk { radius } => vec![("radius", radius)],
            Shape::Rectangle { a, b } => vec![("a", a), ("b", b)],
            Shape::Stadium { a, r } => vec![("a", a), ("r", r)],
        };
        for (name, v) in params {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidSpec(format!(
                    "{name} must be a positive finite length, got {v}"
                )));
            }
        }
        if !(self.origin.x.is_finite() && self.origin.y.is_finite()) {
            return Err(GeometryError::InvalidSpec("origin must be finite".into()));
        }
        Ok(())
    }

    /// Short lowercase name of the shape.
    pub fn kind_name(&self) -> &'static str {
        match self.shape {
            Shape::Disk { .. } => "disk",
            Shape::Rectangle { .. } => "rectangle",
            Shape::Stadium { .. } => "stadium",
        }
    }

    /// Canonical content hash (hex sha256 of the canonical JSON encoding).
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("domain spec serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One smooth piece of the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line { start: Vec2, end: Vec2 },
    /// Counterclockwise arc from angle `theta0` through `sweep` radians.
    Arc { center: Vec2, radius: f64, theta0: f64, sweep: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { start, end } => (end - start).norm(),
            Segment::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    /// Frame at local arclength `t` in `[0, length]`.
    pub fn frame(&self, t: f64) -> Frame {
        match *self {
            Segment::Line { start, end } => {
                let len = (end - start).norm();
                let tangent = (1.0 / len) * (end - start);
                Frame {
                    point: start + t * tangent,
                    tangent,
                    normal: tangent.rot_cw(),
                    curvature: 0.0,
                }
            }
            Segment::Arc { center, radius, theta0, .. } => {
                let phi = theta0 + t / radius;
                let (s, c) = phi.sin_cos();
                Frame {
                    point: center + radius * Vec2::new(c, s),
                    tangent: Vec2::new(-s, c),
                    normal: Vec2::new(c, s),
                    curvature: 1.0 / radius,
                }
            }
        }
    }

    pub fn start_point(&self) -> Vec2 {
        self.frame(0.0).point
    }

    pub fn end_point(&self) -> Vec2 {
        self.frame(self.length()).point
    }
}

/// Point, unit tangent, outward unit normal and signed curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub point: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub curvature: f64,
}

/// Which one-sided limit to take at a corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurve {
    pub spec: DomainSpec,
    pub segments: Vec<Segment>,
    /// Arclength at which each segment starts.
    pub starts: Vec<f64>,
    pub length: f64,
    /// Arclength positions of tangent discontinuities.
    pub corners: Vec<f64>,
    /// Always true: interior lies to the left of the tangent.
    pub counterclockwise: bool,
}

/// Build the boundary curve of a domain.
pub fn build_domain(spec: &DomainSpec) -> Result<BoundaryCurve, GeometryError> {
    spec.validate()?;
    let o = spec.origin;
    let (segments, corner_after_segment): (Vec<Segment>, bool) = match spec.shape {
        Shape::Disk { radius } => (
            vec![Segment::Arc { center: o, radius, theta0: 0.0, sweep: 2.0 * PI }],
            false,
        ),
        Shape::Stadium { a, r } => (
            vec![
                Segment::Line { start: o + Vec2::new(-a, -r), end: o + Vec2::new(a, -r) },
                Segment::Arc { center: o + Vec2::new(a, 0.0), radius: r, theta0: -PI / 2.0, sweep: PI },
                Segment::Line { start: o + Vec2::new(a, r), end: o + Vec2::new(-a, r) },
                Segment::Arc { center: o + Vec2::new(-a, 0.0), radius: r, theta0: PI / 2.0, sweep: PI },
            ],
            false,
        ),
        Shape::Rectangle { a, b } => {
            let c = [
                o + Vec2::new(-a, -b),
                o + Vec2::new(a, -b),
                o + Vec2::new(a, b),
                o + Vec2::new(-a, b),
            ];
            (
                (0..4)
                    .map(|i| Segment::Line { start: c[i], end: c[(i + 1) % 4] })
                    .collect(),
                true,
            )
        }
    };
    let mut starts = Vec::with_capacity(segments.len());
    let mut acc = 0.0;
    for seg in &segments {
        starts.push(acc);
        acc += seg.length();
    }
    let corners = if corner_after_segment { starts.clone() } else { Vec::new() };
    Ok(BoundaryCurve { spec: *spec, segments, starts, length: acc, corners, counterclockwise: true })
}

impl BoundaryCurve {
    /// Reduce an arclength into `[0, L)`.
    pub fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    /// Corner at `s` (within [`CORNER_TOL`]`·L`), if any.
    pub fn corner_at(&self, s: f64) -> Option<f64> {
        let tol = CORNER_TOL * self.length;
        self.corners
            .iter()
            .copied()
            .find(|&c| periodic_distance(s, c, self.length) <= tol)
    }

    fn locate(&self, s: f64, side: Side) -> (usize, f64) {
        let s = self.wrap(s);
        let n = self.segments.len();
        let tol = CORNER_TOL * self.length;
        // segment whose half-open range [start, end) contains s
        let mut idx = match self.starts.iter().rposition(|&st| st <= s) {
            Some(i) => i,
            None => 0,
        };
        let mut t = s - self.starts[idx];
        if side == Side::Before && t <= tol {
            idx = (idx + n - 1) % n;
            t = self.segments[idx].length();
        }
        let len = self.segments[idx].length();
        (idx, t.clamp(0.0, len))
    }

    /// Frame at arclength `s`. Corners need a one-sided request.
    pub fn boundary_eval(&self, s: f64) -> Result<Frame, GeometryError> {
        if let Some(c) = self.corner_at(s) {
            return Err(GeometryError::Corner { s: c });
        }
        Ok(self.eval_unchecked(s, Side::After))
    }

    /// One-sided frame at `s`; away from segment junctions both sides agree.
    pub fn boundary_eval_side(&self, s: f64, side: Side) -> Frame {
        self.eval_unchecked(s, side)
    }

    pub(crate) fn eval_unchecked(&self, s: f64, side: Side) -> Frame {
        let (i, t) = self.locate(s, side);
        self.segments[i].frame(t)
    }

    /// Index of the segment containing `s` (right-continuous).
    pub fn segment_index(&self, s: f64) -> usize {
        self.locate(s, Side::After).0
    }

    /// Interior test with exact distance to the boundary.
    pub fn is_inside(&self, p: Vec2) -> (bool, f64) {
        let sd = self.signed_distance(p);
        (sd > 0.0, sd.abs())
    }

    /// Distance to the boundary, positive inside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let q = p - self.spec.origin;
        match self.spec.shape {
            Shape::Disk { radius } => radius - q.norm(),
            Shape::Rectangle { a, b } => {
                let dx = q.x.abs() - a;
                let dy = q.y.abs() - b;
                if dx <= 0.0 && dy <= 0.0 {
                    -(dx.max(dy))
                } else {
                    -(dx.max(0.0).hypot(dy.max(0.0)))
                }
            }
            Shape::Stadium { a, r } => {
                let cx = q.x.clamp(-a, a);
                r - (q - Vec2::new(cx, 0.0)).norm()
            }
        }
    }

    /// Minimal arclength distance from `s` to a corner; `+inf` without corners.
    pub fn corner_arc_distance(&self, s: f64) -> f64 {
        self.corners
            .iter()
            .map(|&c| periodic_distance(s, c, self.length))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        match self.spec.shape {
            Shape::Disk { radius } => PI * radius * radius,
            Shape::Rectangle { a, b } => 4.0 * a * b,
            Shape::Stadium { a, r } => 4.0 * a * r + PI * r * r,
        }
    }

    /// Radius of the largest inscribed disk.
    pub fn inradius(&self) -> f64 {
        match self.spec.shape {
            Shape::Disk { radius } => radius,
            Shape::Rectangle { a, b } => a.min(b),
            Shape::Stadium { r, .. } => r,
        }
    }

    /// Arclength of the symmetry-adapted grid origin: the point on the
    /// positive-x (disk) or lower (stadium, rectangle) symmetry axis.
    ///
    /// Grids `s_i = s_sym + (i + 1/2) L / M` with `M` divisible by 4 are
    /// mapped onto themselves by both coordinate reflections.
    pub fn symmetric_origin(&self) -> f64 {
        match self.spec.shape {
            Shape::Disk { .. } => 0.0,
            Shape::Rectangle { a, .. } | Shape::Stadium { a, .. } => a,
        }
    }

    /// Smallest `M >= m_target` divisible by 4 with no grid node within
    /// `10^-6 L` of a corner.
    pub fn grid_size(&self, m_target: usize) -> usize {
        let mut m = (m_target.max(8) + 3) / 4 * 4;
        loop {
            let nodes = self.grid_nodes(m);
            let clear = nodes
                .iter()
                .all(|&s| self.corner_arc_distance(s) > 1e-6 * self.length);
            if clear {
                return m;
            }
            m += 4;
        }
    }

    /// Uniform arclength nodes `s_sym + (i + 1/2) L / M`, wrapped to `[0, L)`.
    pub fn grid_nodes(&self, m: usize) -> Vec<f64> {
        let h = self.length / m as f64;
        let s0 = self.symmetric_origin();
        (0..m).map(|i| self.wrap(s0 + (i as f64 + 0.5) * h)).collect()
    }

    /// Frames at the grid nodes.
    pub fn grid_frames(&self, m: usize) -> Vec<Frame> {
        self.grid_nodes(m)
            .into_iter()
            .map(|s| self.eval_unchecked(s, Side::After))
            .collect()
    }

    /// Endpoint mismatch of the segment chain (closure check).
    pub fn closure_error(&self) -> f64 {
        let n = self.segments.len();
        (0..n)
            .map(|i| (self.segments[i].end_point() - self.segments[(i + 1) % n].start_point()).norm())
            .fold(0.0, f64::max)
    }
}

/// Distance between two arclengths on a circle of circumference `l`.
pub fn periodic_distance(s: f64, t: f64, l: f64) -> f64 {
    let d = (s - t).rem_euclid(l);
    d.min(l - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn perimeters_and_corners() {
        let d = build_domain(&DomainSpec::disk(1.0)).unwrap();
        assert!(close(d.length, 2.0 * PI, 1e-14));
        assert!(d.corners.is_empty());
        let s = build_domain(&DomainSpec::stadium(1.0, 1.0)).unwrap();
        assert!(close(s.length, 4.0 + 2.0 * PI, 1e-14));
        assert!(s.corners.is_empty());
        assert_eq!(s.segments.len(), 4);
        assert!(matches!(s.segments[0], Segment::Line { .. }));
        assert!(matches!(s.segments[1], Segment::Arc { .. }));
        let r = build_domain(&DomainSpec::rectangle(1.0, 0.5)).unwrap();
        assert!(close(r.length, 6.0, 1e-14));
        assert_eq!(r.corners.len(), 4);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_domain(&DomainSpec::disk(0.0)).is_err());
        assert!(build_domain(&DomainSpec::stadium(1.0, -1.0)).is_err());
        assert!(build_domain(&DomainSpec::rectangle(f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn unit_disk_frame_at_origin() {
        let d = build_domain(&DomainSpec::disk(1.0)).unwrap();
        let f = d.boundary_eval(0.0).unwrap();
        assert!(close(f.point.x, 1.0, 1e-15) && close(f.point.y, 0.0, 1e-15));
        assert!(close(f.tangent.x, 0.0, 1e-15) && close(f.tangent.y, 1.0, 1e-15));
        assert!(close(f.normal.x, 1.0, 1e-15) && close(f.normal.y, 0.0, 1e-15));
        assert!(close(f.curvature, 1.0, 1e-15));
    }

    #[test]
    fn rectangle_corner_needs_side() {
        let r = build_domain(&DomainSpec::rectangle(1.0, 0.5)).unwrap();
        assert!(matches!(r.boundary_eval(2.0), Err(GeometryError::Corner { .. })));
        let before = r.boundary_eval_side(2.0, Side::Before);
        let after = r.boundary_eval_side(2.0, Side::After);
        assert!(close(before.tangent.x, 1.0, 1e-15));
        assert!(close(after.tangent.y, 1.0, 1e-15));
        assert!((before.point - after.point).norm() < 1e-14);
    }

    #[test]
    fn stadium_junction_curvature_jumps() {
        let s = build_domain(&DomainSpec::stadium(1.0, 1.0)).unwrap();
        let junction = 2.0;
        let before = s.boundary_eval_side(junction, Side::Before);
        let after = s.boundary_eval_side(junction, Side::After);
        assert!((before.point - after.point).norm() < 1e-14);
        assert!((before.tangent - after.tangent).norm() < 1e-14);
        assert_eq!(before.curvature, 0.0);
        assert!(close(after.curvature, 1.0, 1e-15));
        assert!(s.boundary_eval(junction).is_ok());
    }

    #[test]
    fn inside_tests() {
        let d = build_domain(&DomainSpec::disk(1.0)).unwrap();
        assert_eq!(d.is_inside(Vec2::new(0.0, 0.0)), (true, 1.0));
        assert_eq!(d.is_inside(Vec2::new(2.0, 0.0)), (false, 1.0));
        let s = build_domain(&DomainSpec::stadium(1.0, 1.0)).unwrap();
        assert_eq!(s.is_inside(Vec2::new(1.0, 0.0)), (true, 1.0));
        let (inside, dist) = s.is_inside(Vec2::new(2.5, 0.0));
        assert!(!inside && close(dist, 0.5, 1e-15));
        let r = build_domain(&DomainSpec::rectangle(1.0, 0.5)).unwrap();
        let (inside, dist) = r.is_inside(Vec2::new(0.9, 0.0));
        assert!(inside && close(dist, 0.1, 1e-15));
        let (inside, dist) = r.is_inside(Vec2::new(4.0, 4.5));
        assert!(!inside && close(dist, 5.0, 1e-14));
    }

    #[test]
    fn corner_distances() {
        let s = build_domain(&DomainSpec::stadium(1.0, 1.0)).unwrap();
        assert!(s.corner_arc_distance(1.3).is_infinite());
        let r = build_domain(&DomainSpec::rectangle(1.0, 0.5)).unwrap();
        assert!(close(r.corner_arc_distance(1.0), 1.0, 1e-15));
        assert!(close(r.corner_arc_distance(4.0), 1.0, 1e-15));
        assert_eq!(r.corner_arc_distance(3.0), 0.0);
        assert!(close(r.corner_arc_distance(5.9), 0.1, 1e-14));
    }

    #[test]
    fn chains_close() {
        for spec in [DomainSpec::disk(1.3), DomainSpec::stadium(1.0, 1.0), DomainSpec::rectangle(1.0, 0.5)] {
            let c = build_domain(&spec).unwrap();
            assert!(c.closure_error() < 1e-12 * c.length);
            let sum: f64 = c.segments.iter().map(Segment::length).sum();
            assert!(close(sum, c.length, 1e-13));
        }
    }

    #[test]
    fn grids_are_reflection_symmetric_and_avoid_corners() {
        for spec in [DomainSpec::disk(1.0), DomainSpec::stadium(1.0, 1.0), DomainSpec::rectangle(1.0, 0.5)] {
            let c = build_domain(&spec).unwrap();
            let m = c.grid_size(101);
            assert_eq!(m % 4, 0);
            let pts: Vec<Vec2> = c.grid_frames(m).iter().map(|f| f.point).collect();
            for p in &pts {
                for q in [Vec2::new(-p.x, p.y), Vec2::new(p.x, -p.y)] {
                    assert!(pts.iter().any(|r| (*r - q).norm() < 1e-9), "{spec:?}");
                }
            }
            assert!(c.grid_nodes(m).iter().all(|&s| c.corner_arc_distance(s) > 1e-6));
        }
    }

    #[test]
    fn hash_is_stable_and_distinguishes() {
        let a = DomainSpec::stadium(1.0, 1.0);
        assert_eq!(a.content_hash(), a.content_hash());
        assert_ne!(a.content_hash(), DomainSpec::stadium(1.0, 0.5).content_hash());
        let back: DomainSpec = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn periodic_and_normal_orientation(s in 0.0f64..1.0, which in 0usize..3) {
            let spec = [DomainSpec::disk(1.0), DomainSpec::stadium(1.0, 1.0), DomainSpec::rectangle(1.0, 0.5)][which];
            let c = build_domain(&spec).unwrap();
            let s = s * c.length;
            prop_assume!(c.corner_arc_distance(s) > 1e-3);
            let f = c.boundary_eval(s).unwrap();
            let g = c.boundary_eval(s + c.length).unwrap();
            prop_assert!((f.point - g.point).norm() < 1e-12);
            prop_assert!((f.tangent.norm() - 1.0).abs() < 1e-14);
            prop_assert!(f.tangent.dot(f.normal).abs() < 1e-14);
            let eps = 1e-6 * c.length;
            prop_assert!(!c.is_inside(f.point + eps * f.normal).0);
            prop_assert!(c.is_inside(f.point - eps * f.normal).0);
            prop_assert!(c.signed_distance(f.point).abs() < 1e-12);
            let expect_k = match (spec.shape, c.segments[c.segment_index(s)]) {
                (Shape::Disk { radius }, _) => 1.0 / radius,
                (Shape::Stadium { r, .. }, Segment::Arc { .. }) => 1.0 / r,
                _ => 0.0,
            };
            prop_assert!((f.curvature - expect_k).abs() < 1e-15);
        }
    }
}
