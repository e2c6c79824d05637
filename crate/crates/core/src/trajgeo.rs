//! Trajectory containers and the planar metric suite.
//!
//! All displacement metrics are planar (x, y); `z` is carried but never
//! scored. Trajectories are sampled at 10 Hz, sample `i` lying at
//! `t = (i + 1) * 0.1 s` in the ego frame of `t = 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Future samples per trajectory (6.4 s at 10 Hz).
pub const FUTURE_STEPS: usize = 64;
/// History samples (1.6 s at 10 Hz).
pub const HISTORY_STEPS: usize = 16;
pub const STEP_SECONDS: f64 = 0.1;
pub const ROUTE_POINTS: usize = 20;
pub const ROUTE_SPACING: f64 = 4.0;
/// Default collision look-ahead in seconds.
pub const COLLISION_WINDOW: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("trajectory lengths differ: {pred} vs {reference}")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("trajectory set is empty")]
    EmptySet,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("agent `{agent}` has {agent_len} samples, ego has {ego_len}")]
    ClockMismatch {
        agent: String,
        agent_len: usize,
        ego_len: usize,
    },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid footprint {length} x {width}")]
    InvalidFootprint { length: f64, width: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            z,
            heading: wrap_angle(heading),
        }
    }

    pub fn planar(x: f64, y: f64, heading: f64) -> Self {
        Self::new(x, y, 0.0, heading)
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.heading.is_finite()
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 4]> for Pose {
    fn from(v: [f64; 4]) -> Self {
        Pose {
            x: v[0],
            y: v[1],
            z: v[2],
            heading: v[3],
        }
    }
}

impl From<Pose> for [f64; 4] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.z, p.heading]
    }
}

fn check_poses(poses: &[Pose]) -> Result<(), GeoError> {
    if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
        return Err(GeoError::InvalidTrajectory(format!(
            "non-finite pose at index {i}"
        )));
    }
    Ok(())
}

/// Future ego or agent motion at 10 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Pose>", into = "Vec<Pose>")]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    /// Accepts any non-empty run of finite poses; headings are wrapped.
    pub fn new(poses: Vec<Pose>) -> Result<Self, GeoError> {
        if poses.is_empty() {
            return Err(GeoError::InvalidTrajectory("no poses".into()));
        }
        check_poses(&poses)?;
        Ok(Self {
            poses: poses
                .into_iter()
                .map(|p| Pose::new(p.x, p.y, p.z, p.heading))
                .collect(),
        })
    }

    /// Like [`Trajectory::new`] but also requires the full 64-sample horizon.
    pub fn future(poses: Vec<Pose>) -> Result<Self, GeoError> {
        if poses.len() != FUTURE_STEPS {
            return Err(GeoError::InvalidTrajectory(format!(
                "expected {FUTURE_STEPS} poses, found {}",
                poses.len()
            )));
        }
        Self::new(poses)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> &Pose {
        &self.poses[self.poses.len() - 1]
    }

    /// Applies a rigid planar transform (rotation about the origin, then translation).
    pub fn transformed(&self, rotation: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = rotation.sin_cos();
        Self {
            poses: self
                .poses
                .iter()
                .map(|p| {
                    Pose::new(
                        c * p.x - s * p.y + dx,
                        s * p.x + c * p.y + dy,
                        p.z,
                        p.heading + rotation,
                    )
                })
                .collect(),
        }
    }
}

impl TryFrom<Vec<Pose>> for Trajectory {
    type Error = GeoError;

    fn try_from(poses: Vec<Pose>) -> Result<Self, Self::Error> {
        Trajectory::new(poses)
    }
}

impl From<Trajectory> for Vec<Pose> {
    fn from(t: Trajectory) -> Self {
        t.poses
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Trajectory>", into = "Vec<Trajectory>")]
pub struct TrajectorySet {
    modes: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(modes: Vec<Trajectory>) -> Result<Self, GeoError> {
        let first = modes.first().ok_or(GeoError::EmptySet)?;
        if let Some(bad) = modes.iter().find(|m| m.len() != first.len()) {
            return Err(GeoError::LengthMismatch {
                pred: bad.len(),
                reference: first.len(),
            });
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[Trajectory] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

impl TryFrom<Vec<Trajectory>> for TrajectorySet {
    type Error = GeoError;

    fn try_from(modes: Vec<Trajectory>) -> Result<Self, Self::Error> {
        TrajectorySet::new(modes)
    }
}

impl From<TrajectorySet> for Vec<Trajectory> {
    fn from(s: TrajectorySet) -> Self {
        s.modes
    }
}

/// Past ego motion over `[-1.6, 0)` s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Pose>", into = "Vec<Pose>")]
pub struct History {
    poses: Vec<Pose>,
}

impl History {
    pub fn new(poses: Vec<Pose>) -> Result<Self, GeoError> {
        if poses.len() != HISTORY_STEPS {
            return Err(GeoError::InvalidTrajectory(format!(
                "history needs {HISTORY_STEPS} poses, found {}",
                poses.len()
            )));
        }
        check_poses(&poses)?;
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Signed speed at `t = 0` estimated from the last history sample.
    pub fn terminal_speed(&self) -> f64 {
        let last = self.poses[HISTORY_STEPS - 1];
        // Ego frame: the current pose is the origin with zero heading.
        let dx = -last.x;
        let dy = -last.y;
        let along = dx * last.heading.cos() + dy * last.heading.sin();
        along / STEP_SECONDS
    }

    /// Straight constant-speed history ending at the origin.
    pub fn constant_speed(speed: f64) -> Self {
        let poses = (0..HISTORY_STEPS)
            .map(|i| {
                let t = -((HISTORY_STEPS - i) as f64) * STEP_SECONDS;
                Pose::planar(speed * t, 0.0, 0.0)
            })
            .collect();
        Self { poses }
    }
}

impl TryFrom<Vec<Pose>> for History {
    type Error = GeoError;

    fn try_from(poses: Vec<Pose>) -> Result<Self, Self::Error> {
        History::new(poses)
    }
}

impl From<History> for Vec<Pose> {
    fn from(h: History) -> Self {
        h.poses
    }
}

/// Twenty planar waypoints at 4 m spacing ahead of the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Route {
    waypoints: Vec<[f64; 2]>,
}

impl Route {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self, GeoError> {
        if waypoints.len() != ROUTE_POINTS {
            return Err(GeoError::InvalidRoute(format!(
                "expected {ROUTE_POINTS} waypoints, found {}",
                waypoints.len()
            )));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeoError::InvalidRoute("non-finite waypoint".into()));
        }
        for (i, w) in waypoints.windows(2).enumerate() {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if (d - ROUTE_SPACING).abs() > 0.01 * ROUTE_SPACING {
                return Err(GeoError::InvalidRoute(format!(
                    "spacing {d:.3} m after waypoint {i}"
                )));
            }
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    /// Straight route along the heading `angle` from the origin.
    pub fn straight(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            waypoints: (1..=ROUTE_POINTS)
                .map(|k| {
                    let d = k as f64 * ROUTE_SPACING;
                    [d * c, d * s]
                })
                .collect(),
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for Route {
    type Error = GeoError;

    fn try_from(w: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Route::new(w)
    }
}

impl From<Route> for Vec<[f64; 2]> {
    fn from(r: Route) -> Self {
        r.waypoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct VehicleFootprint {
    pub length: f64,
    pub width: f64,
}

impl VehicleFootprint {
    pub fn new(length: f64, width: f64) -> Result<Self, GeoError> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(GeoError::InvalidFootprint { length, width });
        }
        Ok(Self { length, width })
    }
}

impl Default for VehicleFootprint {
    fn default() -> Self {
        Self {
            length: 4.6,
            width: 1.8,
        }
    }
}

impl TryFrom<[f64; 2]> for VehicleFootprint {
    type Error = GeoError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        VehicleFootprint::new(v[0], v[1])
    }
}

impl From<VehicleFootprint> for [f64; 2] {
    fn from(f: VehicleFootprint) -> Self {
        [f.length, f.width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: String,
    pub footprint: VehicleFootprint,
    pub trajectory: Trajectory,
}

/// Drivable region as a simple polygon in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct RoadBoundary {
    vertices: Vec<[f64; 2]>,
}

impl RoadBoundary {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeoError> {
        let mut vertices = vertices;
        if vertices.len() > 3 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeoError::InvalidPolygon(format!(
                "{} vertices",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeoError::InvalidPolygon("non-finite vertex".into()));
        }
        if signed_area(&vertices).abs() <= 0.0 {
            return Err(GeoError::InvalidPolygon("zero area".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if a == b {
                return Err(GeoError::InvalidPolygon(format!("repeated vertex {i}")));
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeoError::InvalidPolygon(format!("edges {i} and {j} cross")));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        let scale = self
            .vertices
            .iter()
            .flatten()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let eps = 1e-9 * scale;
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if point_on_segment(p, a, b, eps) {
                return true;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

impl TryFrom<Vec<[f64; 2]>> for RoadBoundary {
    type Error = GeoError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        RoadBoundary::new(v)
    }
}

impl From<RoadBoundary> for Vec<[f64; 2]> {
    fn from(b: RoadBoundary) -> Self {
        b.vertices
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn point_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2], eps: f64) -> bool {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if len == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]) <= eps;
    }
    if (cross(a, b, p) / len).abs() > eps {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    dot >= -eps * len && dot <= len * len + eps * len
}

/// Segment intersection with a relative tolerance, so collinear but
/// disjoint edges are not reported as crossing because of rounding.
fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let len_ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let len_cd = (d[0] - c[0]).hypot(d[1] - c[1]);
    let tol = 1e-12 * len_ab.max(len_cd).max(1.0) * len_ab.max(len_cd).max(1.0) * 16.0;
    let sign = |v: f64| {
        if v > tol {
            1
        } else if v < -tol {
            -1
        } else {
            0
        }
    };
    let d1 = sign(cross(c, d, a));
    let d2 = sign(cross(c, d, b));
    let d3 = sign(cross(a, b, c));
    let d4 = sign(cross(a, b, d));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    let eps = 1e-9 * len_ab.max(len_cd).max(1.0);
    (d1 == 0 && point_on_segment(a, c, d, eps))
        || (d2 == 0 && point_on_segment(b, c, d, eps))
        || (d3 == 0 && point_on_segment(c, a, b, eps))
        || (d4 == 0 && point_on_segment(d, a, b, eps))
}

/// Per-scene or corpus-level metric summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub min_ade: f64,
    pub avg_ade: f64,
    pub min_fde: f64,
    pub avg_fde: f64,
    pub corner_distance: f64,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iou_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iou_edited: Option<f64>,
}

fn same_length(pred: &Trajectory, reference: &Trajectory) -> Result<(), GeoError> {
    if pred.len() != reference.len() {
        return Err(GeoError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    Ok(())
}

/// Mean planar displacement over all steps.
pub fn ade(pred: &Trajectory, reference: &Trajectory) -> Result<f64, GeoError> {
    same_length(pred, reference)?;
    let total: f64 = pred
        .poses()
        .iter()
        .zip(reference.poses())
        .map(|(p, r)| p.planar_distance(r))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Planar displacement at the final step.
pub fn fde(pred: &Trajectory, reference: &Trajectory) -> Result<f64, GeoError> {
    same_length(pred, reference)?;
    Ok(pred.last().planar_distance(reference.last()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementSummary {
    pub min_ade: f64,
    pub avg_ade: f64,
    pub min_fde: f64,
    pub avg_fde: f64,
    /// Index of the mode with the lowest ADE (first on ties).
    pub best_mode: usize,
}

/// Min and mean ADE/FDE over the modes of a set. `min_fde` is taken
/// independently of the min-ADE mode.
pub fn set_metrics(
    set: &TrajectorySet,
    reference: &Trajectory,
) -> Result<DisplacementSummary, GeoError> {
    if set.is_empty() {
        return Err(GeoError::EmptySet);
    }
    let mut out = DisplacementSummary {
        min_ade: f64::INFINITY,
        avg_ade: 0.0,
        min_fde: f64::INFINITY,
        avg_fde: 0.0,
        best_mode: 0,
    };
    for (i, mode) in set.modes().iter().enumerate() {
        let a = ade(mode, reference)?;
        let f = fde(mode, reference)?;
        if a < out.min_ade {
            out.min_ade = a;
            out.best_mode = i;
        }
        out.min_fde = out.min_fde.min(f);
        out.avg_ade += a;
        out.avg_fde += f;
    }
    let n = set.len() as f64;
    out.avg_ade /= n;
    out.avg_fde /= n;
    Ok(out)
}

/// Convenience for the filter: minimum ADE over a set.
pub fn min_ade(set: &TrajectorySet, reference: &Trajectory) -> Result<f64, GeoError> {
    set_metrics(set, reference).map(|s| s.min_ade)
}

/// Corners of the footprint rectangle at `pose`: front-left, front-right,
/// rear-right, rear-left.
pub fn corner_keypoints(pose: &Pose, footprint: &VehicleFootprint) -> [[f64; 2]; 4] {
    let (s, c) = pose.heading.sin_cos();
    let hl = footprint.length / 2.0;
    let hw = footprint.width / 2.0;
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
        .map(|(u, v)| [pose.x + c * u - s * v, pose.y + s * u + c * v])
}

/// Mean distance between corresponding footprint corners over all steps.
pub fn corner_distance(
    pred: &Trajectory,
    reference: &Trajectory,
    footprint: &VehicleFootprint,
) -> Result<f64, GeoError> {
    same_length(pred, reference)?;
    let mut total = 0.0;
    for (p, r) in pred.poses().iter().zip(reference.poses()) {
        let pc = corner_keypoints(p, footprint);
        let rc = corner_keypoints(r, footprint);
        total += pc
            .iter()
            .zip(rc.iter())
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .sum::<f64>();
    }
    Ok(total / (4.0 * pred.len() as f64))
}

/// Corner distance evaluated on the min-ADE mode of the set.
pub fn set_corner_distance(
    set: &TrajectorySet,
    reference: &Trajectory,
    footprint: &VehicleFootprint,
) -> Result<f64, GeoError> {
    let summary = set_metrics(set, reference)?;
    corner_distance(&set.modes()[summary.best_mode], reference, footprint)
}

#[derive(Debug, Clone, Copy)]
struct OrientedBox {
    center: [f64; 2],
    /// Unit heading axis and its left normal.
    axes: [[f64; 2]; 2],
    half: [f64; 2],
}

impl OrientedBox {
    fn new(center: [f64; 2], heading: f64, half_length: f64, half_width: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Self {
            center,
            axes: [[c, s], [-s, c]],
            half: [half_length, half_width],
        }
    }

    fn radius_along(&self, n: [f64; 2]) -> f64 {
        self.half[0] * dot(self.axes[0], n).abs() + self.half[1] * dot(self.axes[1], n).abs()
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Separating-axis test; touching counts as overlap.
fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
    a.axes
        .iter()
        .chain(b.axes.iter())
        .all(|&n| dot(d, n).abs() <= a.radius_along(n) + b.radius_along(n))
}

/// Exact overlap test for two boxes translating linearly with fixed
/// orientation over a unit parameter interval.
fn translating_boxes_overlap(
    a: &OrientedBox,
    a_end: [f64; 2],
    b: &OrientedBox,
    b_end: [f64; 2],
) -> bool {
    let d0 = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
    let d1 = [b_end[0] - a_end[0], b_end[1] - a_end[1]];
    let rate = [d1[0] - d0[0], d1[1] - d0[1]];
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for n in a.axes.iter().chain(b.axes.iter()) {
        let p = dot(d0, *n);
        let q = dot(rate, *n);
        let r = a.radius_along(*n) + b.radius_along(*n);
        if q.abs() < 1e-15 {
            if p.abs() > r {
                return false;
            }
            continue;
        }
        let (t0, t1) = ((-r - p) / q, (r - p) / q);
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo > hi {
            return false;
        }
    }
    true
}

fn mid_heading(a: f64, b: f64) -> f64 {
    wrap_angle(a + wrap_angle(b - a) / 2.0)
}

fn step_travel(poses: &[Pose], i: usize) -> f64 {
    let prev = if i > 0 {
        poses[i].planar_distance(&poses[i - 1])
    } else {
        0.0
    };
    let next = if i + 1 < poses.len() {
        poses[i].planar_distance(&poses[i + 1])
    } else {
        0.0
    };
    prev.max(next)
}

/// Number of samples at or before `window` seconds.
pub fn steps_within(window: f64, len: usize) -> usize {
    let n = (window / STEP_SECONDS + 1e-9).floor().max(0.0) as usize;
    n.min(len)
}

const BROAD_PHASE_SLACK: f64 = 0.1;

/// True when the ego footprint overlaps any agent footprint at some time
/// `t <= window`.
///
/// Each 10 Hz sample is first tested with boxes lengthened by half the
/// per-step travel (a swept approximation). Flagged steps are confirmed with
/// an exact test of both boxes translating between neighboring samples.
pub fn collision_check(
    traj: &Trajectory,
    ego_fp: &VehicleFootprint,
    agents: &[AgentTrack],
    window: f64,
) -> Result<bool, GeoError> {
    for agent in agents {
        if agent.trajectory.len() != traj.len() {
            return Err(GeoError::ClockMismatch {
                agent: agent.id.clone(),
                agent_len: agent.trajectory.len(),
                ego_len: traj.len(),
            });
        }
    }
    let steps = steps_within(window, traj.len());
    if steps == 0 {
        return Ok(false);
    }
    let ego = traj.poses();
    for agent in agents {
        let other = agent.trajectory.poses();
        let inflated = |poses: &[Pose], fp: &VehicleFootprint, i: usize| {
            OrientedBox::new(
                poses[i].xy(),
                poses[i].heading,
                fp.length / 2.0 + step_travel(poses, i) / 2.0 + BROAD_PHASE_SLACK,
                fp.width / 2.0 + BROAD_PHASE_SLACK,
            )
        };
        let flagged: Vec<bool> = (0..steps)
            .map(|i| {
                boxes_overlap(
                    &inflated(ego, ego_fp, i),
                    &inflated(other, &agent.footprint, i),
                )
            })
            .collect();
        if steps == 1 {
            if flagged[0] {
                let a = OrientedBox::new(
                    ego[0].xy(),
                    ego[0].heading,
                    ego_fp.length / 2.0,
                    ego_fp.width / 2.0,
                );
                let b = OrientedBox::new(
                    other[0].xy(),
                    other[0].heading,
                    agent.footprint.length / 2.0,
                    agent.footprint.width / 2.0,
                );
                if boxes_overlap(&a, &b) {
                    return Ok(true);
                }
            }
            continue;
        }
        for i in 0..steps - 1 {
            if !(flagged[i] || flagged[i + 1]) {
                continue;
            }
            let a = OrientedBox::new(
                ego[i].xy(),
                mid_heading(ego[i].heading, ego[i + 1].heading),
                ego_fp.length / 2.0,
                ego_fp.width / 2.0,
            );
            let b = OrientedBox::new(
                other[i].xy(),
                mid_heading(other[i].heading, other[i + 1].heading),
                agent.footprint.length / 2.0,
                agent.footprint.width / 2.0,
            );
            if translating_boxes_overlap(&a, ego[i + 1].xy(), &b, other[i + 1].xy()) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// One scene's predicted modes together with the agents they must avoid.
#[derive(Debug, Clone, Copy)]
pub struct CollisionScene<'a> {
    pub set: &'a TrajectorySet,
    pub agents: &'a [AgentTrack],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionRates {
    /// Fraction of all predicted trajectories (pooled over scenes) that collide.
    pub mode_pooled: f64,
    /// Fraction of scenes with at least one colliding mode.
    pub scene_level: f64,
}

pub fn collision_rates(
    scenes: &[CollisionScene<'_>],
    ego_fp: &VehicleFootprint,
    window: f64,
) -> Result<CollisionRates, GeoError> {
    if scenes.is_empty() {
        return Err(GeoError::EmptyCorpus);
    }
    let per_scene = crate::par::try_map_ordered(scenes, |scene| {
        scene
            .set
            .modes()
            .iter()
            .map(|m| collision_check(m, ego_fp, scene.agents, window))
            .collect::<Result<Vec<bool>, GeoError>>()
    })?;
    let total: usize = per_scene.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(GeoError::EmptyCorpus);
    }
    let colliding: usize = per_scene
        .iter()
        .map(|v| v.iter().filter(|&&c| c).count())
        .sum();
    let scenes_hit = per_scene.iter().filter(|v| v.iter().any(|&c| c)).count();
    Ok(CollisionRates {
        mode_pooled: colliding as f64 / total as f64,
        scene_level: scenes_hit as f64 / per_scene.len() as f64,
    })
}

/// Mode-pooled collision rate.
pub fn collision_rate(
    scenes: &[CollisionScene<'_>],
    ego_fp: &VehicleFootprint,
    window: f64,
) -> Result<f64, GeoError> {
    collision_rates(scenes, ego_fp, window).map(|r| r.mode_pooled)
}

/// True when any footprint corner at any step lies strictly outside the
/// drivable polygon.
pub fn offroad_check(
    traj: &Trajectory,
    ego_fp: &VehicleFootprint,
    boundary: &RoadBoundary,
) -> bool {
    traj.poses().iter().any(|p| {
        corner_keypoints(p, ego_fp)
            .iter()
            .any(|&c| !boundary.contains(c))
    })
}
