//! Planar frames, polylines and oriented boxes.
//!
//! Everything here is double precision and allocation-light. Angles are
//! kept in `(-π, π]`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polyline needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
}

/// A 2D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle`.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotated by +90°.
    pub fn perp(self) -> Self {
        Self { x: -self.y, y: self.x }
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c * self.x - s * self.y, y: s * self.x + c * self.y }
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Self {
        self + (o - self) * t
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Self { x: a[0], y: a[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }
}

/// Expresses a global point in the frame of `reference` (x forward, y left).
pub fn to_local(reference: &Pose2D, point: Vec2) -> Vec2 {
    let (s, c) = reference.yaw.sin_cos();
    let dx = point.x - reference.x;
    let dy = point.y - reference.y;
    Vec2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`to_local`].
pub fn to_global(reference: &Pose2D, point: Vec2) -> Vec2 {
    let (s, c) = reference.yaw.sin_cos();
    Vec2::new(c * point.x - s * point.y + reference.x, s * point.x + c * point.y + reference.y)
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Signed distance, positive to the left of the direction of travel.
    pub offset: f64,
    /// Arclength of the foot point.
    pub arclength: f64,
    /// Index of the segment holding the foot point.
    pub segment: usize,
    pub foot: Vec2,
}

/// An ordered list of at least two distinct points with cached arclengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumlen: Vec<f64>,
}

impl TryFrom<Vec<Vec2>> for Polyline {
    type Error = GeometryError;
    fn try_from(points: Vec<Vec2>) -> Result<Self, Self::Error> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Vec2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

const MIN_SEGMENT: f64 = 1e-9;

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        let mut cumlen = Vec::with_capacity(points.len());
        cumlen.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            if !w[1].is_finite() || !w[0].is_finite() {
                return Err(GeometryError::NonFinite(if w[0].is_finite() { i + 1 } else { i }));
            }
            let len = w[0].distance(w[1]);
            if len <= MIN_SEGMENT {
                return Err(GeometryError::DuplicatePoint(i, i + 1));
            }
            cumlen.push(cumlen[i] + len);
        }
        Ok(Self { points, cumlen })
    }

    /// Like [`Polyline::new`] but silently drops consecutive duplicates first.
    pub fn dedup(points: impl IntoIterator<Item = Vec2>) -> Result<Self, GeometryError> {
        let mut out: Vec<Vec2> = Vec::new();
        for p in points {
            if out.last().is_none_or(|q| q.distance(p) > 1e-6) {
                out.push(p);
            }
        }
        Self::new(out)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.cumlen
    }

    pub fn length(&self) -> f64 {
        *self.cumlen.last().unwrap()
    }

    pub fn first(&self) -> Vec2 {
        self.points[0]
    }

    pub fn last(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the segment containing arclength `s` (clamped to the line).
    pub fn segment_at(&self, s: f64) -> usize {
        let n = self.segment_count();
        // first index with cumlen > s, minus one
        let idx = self.cumlen.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(n - 1)
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg_len = self.cumlen[i + 1] - self.cumlen[i];
        let t = ((s - self.cumlen[i]) / seg_len).clamp(0.0, 1.0);
        self.points[i].lerp(self.points[i + 1], t)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Nearest-segment projection over the whole line.
    pub fn project(&self, p: Vec2) -> Projection {
        self.project_segments(p, 0, self.segment_count() - 1)
    }

    /// Projection restricted to segments overlapping `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Vec2, s_lo: f64, s_hi: f64) -> Projection {
        let first = self.segment_at(s_lo.max(0.0));
        let last = self.segment_at(s_hi.max(s_lo).min(self.length()));
        self.project_segments(p, first, last)
    }

    fn project_segments(&self, p: Vec2, first: usize, last: usize) -> Projection {
        let mut best: Option<(f64, usize, f64, Vec2)> = None;
        for i in first..=last {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let len_sq = ab.norm_sq();
            let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let dist_sq = (p - foot).norm_sq();
            // strict comparison keeps the lower-arclength segment on ties
            if best.as_ref().is_none_or(|(d, ..)| dist_sq < *d) {
                best = Some((dist_sq, i, t, foot));
            }
        }
        let (dist_sq, i, t, foot) = best.expect("polyline has at least one segment");
        let n = self.segment_count();
        // A foot on an interior vertex takes its side from the bisecting
        // tangent so that both adjacent segments agree.
        let vertex = if t == 0.0 && i > 0 {
            Some(i)
        } else if t == 1.0 && i + 1 < n {
            Some(i + 1)
        } else {
            None
        };
        let side = match vertex {
            Some(v) => {
                let d_in = self.points[v] - self.points[v - 1];
                let d_out = self.points[v + 1] - self.points[v];
                let tangent = d_in * (1.0 / d_in.norm()) + d_out * (1.0 / d_out.norm());
                if tangent.norm() > 1e-9 {
                    tangent.cross(p - self.points[v])
                } else {
                    d_in.cross(p - self.points[v])
                }
            }
            None => (self.points[i + 1] - self.points[i]).cross(p - self.points[i]),
        };
        let dist = dist_sq.sqrt();
        let seg_len = self.cumlen[i + 1] - self.cumlen[i];
        Projection {
            offset: if side < 0.0 { -dist } else { dist },
            arclength: self.cumlen[i] + t * seg_len,
            segment: i,
            foot,
        }
    }

    /// Sub-line between arclengths `s0 < s1`; `None` when the span is empty.
    pub fn slice(&self, s0: f64, s1: f64) -> Option<Polyline> {
        let s0 = s0.clamp(0.0, self.length());
        let s1 = s1.clamp(0.0, self.length());
        if s1 - s0 <= 1e-6 {
            return None;
        }
        let mut pts = vec![self.point_at(s0)];
        for (p, &c) in self.points.iter().zip(&self.cumlen) {
            if c > s0 + 1e-9 && c < s1 - 1e-9 {
                pts.push(*p);
            }
        }
        pts.push(self.point_at(s1));
        Polyline::dedup(pts).ok()
    }

    /// Uniform resampling with `ceil(length / max_spacing)` equal arclength steps.
    pub fn resample(&self, max_spacing: f64) -> Polyline {
        let len = self.length();
        let n = (len / max_spacing).ceil().max(1.0) as usize;
        let pts = (0..=n).map(|i| self.point_at(len * i as f64 / n as f64));
        Polyline::dedup(pts).unwrap_or_else(|_| self.clone())
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts).expect("reversal preserves validity")
    }

    /// Vertex-wise parallel offset, positive to the left. Mitre-free: each
    /// vertex is displaced along the averaged normal of its two segments.
    pub fn offset_points(&self, distance: f64) -> Vec<Vec2> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let dir_in = if i > 0 { Some(self.points[i] - self.points[i - 1]) } else { None };
                let dir_out = if i + 1 < n { Some(self.points[i + 1] - self.points[i]) } else { None };
                let normal = match (dir_in, dir_out) {
                    (Some(a), Some(b)) => {
                        let na = a.perp() * (1.0 / a.norm());
                        let nb = b.perp() * (1.0 / b.norm());
                        let avg = na + nb;
                        let k = avg.norm();
                        if k < 1e-9 {
                            na
                        } else {
                            avg * (1.0 / k)
                        }
                    }
                    (Some(a), None) => a.perp() * (1.0 / a.norm()),
                    (None, Some(b)) => b.perp() * (1.0 / b.norm()),
                    (None, None) => unreachable!(),
                };
                self.points[i] + normal * distance
            })
            .collect()
    }
}

/// Signed perpendicular offset (left positive) and foot arclength.
pub fn lateral_offset(line: &Polyline, point: Vec2) -> (f64, f64) {
    let p = line.project(point);
    (p.offset, p.arclength)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, yaw: f64, half_length: f64, half_width: f64) -> Self {
        Self { center, yaw, half_length, half_width }
    }

    pub fn axes(&self) -> (Vec2, Vec2) {
        let fwd = Vec2::from_angle(self.yaw);
        (fwd, fwd.perp())
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let fl = f * self.half_length;
        let lw = l * self.half_width;
        let c = self.center;
        [c + fl + lw, c - fl + lw, c - fl - lw, c + fl - lw]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (f, l) = self.axes();
        let d = p - self.center;
        d.dot(f).abs() <= self.half_length && d.dot(l).abs() <= self.half_width
    }
}

/// Separating-axis overlap test over the four edge normals. Touching counts.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let (af, al) = a.axes();
    let (bf, bl) = b.axes();
    for axis in [af, al, bf, bl] {
        let (amin, amax) = extent(&ca, axis);
        let (bmin, bmax) = extent(&cb, axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

fn extent(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let v = c.dot(axis);
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((normalize_angle(7.0) - (7.0 - TAU)).abs() < 1e-12);
    }

    #[test]
    fn to_local_examples() {
        assert_eq!(to_local(&Pose2D::new(0.0, 0.0, 0.0), Vec2::new(3.0, 4.0)), Vec2::new(3.0, 4.0));
        // rotate Δp = (0, 2) by -π/2 → (2, 0)
        let r = to_local(&Pose2D::new(1.0, 0.0, PI / 2.0), Vec2::new(1.0, 2.0));
        assert!(close(r, Vec2::new(2.0, 0.0), 1e-12));
        let r = to_local(&Pose2D::new(5.0, 5.0, PI), Vec2::new(5.0, 5.0));
        assert!(close(r, Vec2::ZERO, 1e-12));
    }

    #[test]
    fn to_global_examples() {
        assert_eq!(to_global(&Pose2D::new(0.0, 0.0, 0.0), Vec2::new(3.0, 4.0)), Vec2::new(3.0, 4.0));
        let r = to_global(&Pose2D::new(1.0, 0.0, PI / 2.0), Vec2::new(2.0, 0.0));
        assert!(close(r, Vec2::new(1.0, 2.0), 1e-12));
    }

    #[test]
    fn overlap_trivial_cases() {
        let a = OrientedBox::new(Vec2::ZERO, 0.0, 1.0, 1.0);
        assert!(boxes_overlap(&a, &a));
        let b = OrientedBox::new(Vec2::new(10.0, 0.0), 0.0, 1.0, 1.0);
        assert!(!boxes_overlap(&a, &b));
    }

    /// Dense grid membership: do any sample points lie in both boxes?
    fn grid_overlap(a: &OrientedBox, b: &OrientedBox, n: usize) -> bool {
        let r = a.half_length.hypot(a.half_width);
        let lo = a.center - Vec2::new(r, r);
        let step = 2.0 * r / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                let p = lo + Vec2::new(i as f64 * step, j as f64 * step);
                if a.contains(p) && b.contains(p) {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn overlap_rotated_square_matches_grid_oracle() {
        let a = OrientedBox::new(Vec2::ZERO, 0.0, 1.0, 1.0);
        let b = OrientedBox::new(Vec2::new(1.9, 0.0), PI / 4.0, 1.0, 1.0);
        // the rotated square's left corner reaches x = 1.9 - √2 ≈ 0.486, well inside a
        let oracle = grid_overlap(&a, &b, 400);
        assert!(oracle);
        assert_eq!(boxes_overlap(&a, &b), oracle);
        let c = OrientedBox::new(Vec2::new(2.5, 0.0), PI / 4.0, 1.0, 1.0);
        assert_eq!(boxes_overlap(&a, &c), grid_overlap(&a, &c, 400));
    }

    #[test]
    fn lateral_offset_straight() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)]).unwrap();
        assert_eq!(lateral_offset(&line, Vec2::new(5.0, 2.0)), (2.0, 5.0));
        assert_eq!(lateral_offset(&line, Vec2::new(3.0, 0.0)), (0.0, 3.0));
        assert_eq!(lateral_offset(&line, Vec2::new(3.0, -1.5)), (-1.5, 3.0));
    }

    fn brute_force_offset(pts: &[Vec2], p: Vec2) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut s0 = 0.0;
        for w in pts.windows(2) {
            let len = w[0].distance(w[1]);
            // dense sampling along the segment
            for k in 0..=20000 {
                let t = k as f64 / 20000.0;
                let q = w[0].lerp(w[1], t);
                let d = p.distance(q);
                if d < best.0 - 1e-12 {
                    let side = (w[1] - w[0]).cross(p - w[0]);
                    best = (d, if side < 0.0 { -d } else { d }, s0 + t * len);
                }
            }
            s0 += len;
        }
        (best.1, best.2)
    }

    #[test]
    fn lateral_offset_l_shape_matches_brute_force() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let line = Polyline::new(pts.clone()).unwrap();
        for p in [Vec2::new(9.0, 1.5), Vec2::new(11.0, -1.0), Vec2::new(8.5, 0.7), Vec2::new(10.4, 3.0)] {
            let (o, s) = lateral_offset(&line, p);
            let (bo, bs) = brute_force_offset(&pts, p);
            assert!((o - bo).abs() < 1e-3, "{p:?}: {o} vs {bo}");
            assert!((s - bs).abs() < 2e-3, "{p:?}: {s} vs {bs}");
        }
    }

    #[test]
    fn lateral_offset_corner_tie_prefers_lower_arclength() {
        // equidistant from both legs of the inner corner
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]).unwrap();
        let (o, s) = lateral_offset(&line, Vec2::new(9.0, 1.0));
        assert_eq!(o, 1.0);
        assert_eq!(s, 9.0);
    }

    #[test]
    fn polyline_rejects_bad_input() {
        assert_eq!(Polyline::new(vec![Vec2::ZERO]), Err(GeometryError::TooFewPoints(1)));
        assert_eq!(
            Polyline::new(vec![Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 0.0)]),
            Err(GeometryError::DuplicatePoint(0, 1))
        );
    }

    #[test]
    fn resample_and_slice() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 5.5)]).unwrap();
        let r = line.resample(1.0);
        assert_eq!(r.segment_count(), 16);
        assert!((r.length() - 15.5).abs() < 0.5);
        let sl = line.slice(2.0, 12.0).unwrap();
        assert!((sl.length() - 10.0).abs() < 1e-12);
        assert!(close(sl.first(), Vec2::new(2.0, 0.0), 1e-12));
        assert!(close(sl.last(), Vec2::new(10.0, 2.0), 1e-12));
        assert!(line.slice(3.0, 3.0).is_none());
    }

    #[test]
    fn polyline_serde_round_trip() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 2.0)]).unwrap();
        let json = serde_json::to_string(&line).unwrap();
        assert_eq!(json, "[[0.0,0.0],[1.0,2.0]]");
        let back: Polyline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, line);
        assert!(serde_json::from_str::<Polyline>("[[0.0,0.0]]").is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose2D> {
        (-1e3..1e3f64, -1e3..1e3f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (-4.0..4.0f64, -4.0..4.0f64, -PI..PI, 0.3..3.0f64, 0.2..1.0f64).prop_map(|(x, y, yaw, hl, k)| {
            OrientedBox::new(Vec2::new(x, y), yaw, hl, hl * k)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn local_global_round_trip(pose in arb_pose(), px in -1e3..1e3f64, py in -1e3..1e3f64) {
            let p = Vec2::new(px, py);
            prop_assert!(close(to_global(&pose, to_local(&pose, p)), p, 1e-9));
            prop_assert!(close(to_local(&pose, to_global(&pose, p)), p, 1e-9));
        }

        #[test]
        fn pose_yaw_is_normalized(yaw in -100.0..100.0f64) {
            let p = Pose2D::new(0.0, 0.0, yaw);
            prop_assert!(p.yaw > -PI && p.yaw <= PI);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn overlap_is_symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(boxes_overlap(&a, &b), boxes_overlap(&b, &a));
        }

        #[test]
        fn overlap_agrees_with_grid_oracle(a in arb_box(), b in arb_box()) {
            // 100×100 grid over the joint bounding square
            let ra = a.half_length.hypot(a.half_width);
            let rb = b.half_length.hypot(b.half_width);
            let lo = Vec2::new((a.center.x - ra).min(b.center.x - rb), (a.center.y - ra).min(b.center.y - rb));
            let hi = Vec2::new((a.center.x + ra).max(b.center.x + rb), (a.center.y + ra).max(b.center.y + rb));
            let n = 100;
            let cell = ((hi.x - lo.x).max(hi.y - lo.y)) / (n - 1) as f64;
            let mut grid = false;
            for i in 0..n {
                for j in 0..n {
                    let p = lo + Vec2::new(i as f64 * cell, j as f64 * cell);
                    if a.contains(p) && b.contains(p) {
                        grid = true;
                    }
                }
            }
            let sat = boxes_overlap(&a, &b);
            if sat != grid {
                // only allowed when the configuration is within one grid cell of touching
                let grown = |o: &OrientedBox, d: f64| OrientedBox::new(o.center, o.yaw, o.half_length + d, o.half_width + d);
                let shrunk = |o: &OrientedBox, d: f64| OrientedBox::new(o.center, o.yaw, (o.half_length - d).max(1e-3), (o.half_width - d).max(1e-3));
                let margin = cell * 1.5;
                prop_assert!(boxes_overlap(&grown(&a, margin), &grown(&b, margin)));
                prop_assert!(!boxes_overlap(&shrunk(&a, margin), &shrunk(&b, margin)));
            }
        }

        #[test]
        fn offset_flips_with_reversal(
            xs in proptest::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 2..6),
            px in -25.0..25.0f64, py in -25.0..25.0f64,
        ) {
            let line = match Polyline::dedup(xs.into_iter().map(|(x, y)| Vec2::new(x, y))) {
                Ok(l) => l,
                Err(_) => return Ok(()),
            };
            let p = Vec2::new(px, py);
            let (a, _) = lateral_offset(&line, p);
            let (b, _) = lateral_offset(&line.reversed(), p);
            prop_assert!((a + b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
