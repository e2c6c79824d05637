//! Rule-based meta-action labeling from kinematic profiles.

use serde::{Deserialize, Serialize};

use super::{ScenarioError, BINS};
use crate::metaction::{ActionGroup, ActionLabel, GroupTimeline, MetaActionPlan, BIN_SECONDS};
use crate::trajgeo::{wrap_angle, History, Pose, Route, Trajectory, STEP_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    /// m/s²
    pub accel_threshold: f64,
    /// m/s
    pub wait_speed: f64,
    /// m/s
    pub reverse_speed: f64,
    /// rad of heading change over `turn_window`
    pub turn_threshold: f64,
    /// s
    pub turn_window: f64,
    /// m
    pub lane_shift: f64,
    /// Lateral drift (m/s) that opens a lane-change candidate run.
    pub lane_drift_rate: f64,
    /// Centered moving-average window, s.
    pub smoothing: f64,
    /// s
    pub min_segment: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            accel_threshold: 0.5,
            wait_speed: 0.3,
            reverse_speed: 0.1,
            turn_threshold: 0.15,
            turn_window: 1.0,
            lane_shift: 1.75,
            lane_drift_rate: 0.1,
            smoothing: 0.5,
            min_segment: 0.5,
        }
    }
}

fn grid_bins(seconds: f64) -> Option<usize> {
    let bins = (seconds / BIN_SECONDS).round();
    ((seconds - bins * BIN_SECONDS).abs() <= 0.01 && bins >= 1.0).then_some(bins as usize)
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fields = [
            ("accel_threshold", self.accel_threshold),
            ("wait_speed", self.wait_speed),
            ("reverse_speed", self.reverse_speed),
            ("turn_threshold", self.turn_threshold),
            ("turn_window", self.turn_window),
            ("lane_shift", self.lane_shift),
            ("lane_drift_rate", self.lane_drift_rate),
            ("smoothing", self.smoothing),
            ("min_segment", self.min_segment),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::InvalidConfig(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("turn_window", self.turn_window),
            ("smoothing", self.smoothing),
            ("min_segment", self.min_segment),
        ] {
            if grid_bins(value).is_none() {
                return Err(ScenarioError::InvalidConfig(format!(
                    "{name} = {value} is off the 0.1 s grid"
                )));
            }
        }
        Ok(())
    }

    fn smoothing_bins(&self) -> usize {
        grid_bins(self.smoothing).unwrap_or(1)
    }

    fn min_bins(&self) -> usize {
        grid_bins(self.min_segment).unwrap_or(1)
    }
}

/// Centered moving average of odd width, shrinking at the ends.
fn smooth(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Poses at `t = 0, 0.1, …, 6.4`; the current pose is the ego-frame origin.
fn timeline_poses(traj: &Trajectory) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(traj.len() + 1);
    poses.push(Pose::planar(0.0, 0.0, 0.0));
    poses.extend_from_slice(traj.poses());
    poses
}

fn mid_heading(a: f64, b: f64) -> f64 {
    a + wrap_angle(b - a) / 2.0
}

/// Signed along-track speed per bin.
fn bin_speeds(poses: &[Pose]) -> Vec<f64> {
    poses
        .windows(2)
        .map(|w| {
            let h = mid_heading(w[0].heading, w[1].heading);
            ((w[1].x - w[0].x) * h.cos() + (w[1].y - w[0].y) * h.sin()) / STEP_SECONDS
        })
        .collect()
}

fn longitudinal(poses: &[Pose], history: &History, cfg: &LabelerConfig) -> Vec<ActionLabel> {
    let v = bin_speeds(poses);
    let n = v.len();
    let v_before = history.terminal_speed();
    let raw_accel: Vec<f64> = (0..n)
        .map(|b| {
            if b + 1 < n {
                let prev = if b == 0 { v_before } else { v[b - 1] };
                (v[b + 1] - prev) / (2.0 * STEP_SECONDS)
            } else if n >= 2 {
                (v[b] - v[b - 1]) / STEP_SECONDS
            } else {
                (v[b] - v_before) / STEP_SECONDS
            }
        })
        .collect();
    let accel = smooth(&raw_accel, cfg.smoothing_bins());
    v.iter()
        .zip(&accel)
        .map(|(&speed, &a)| {
            if speed.abs() < cfg.wait_speed {
                ActionLabel::Wait
            } else if speed < -cfg.reverse_speed {
                ActionLabel::Reverse
            } else if a > cfg.accel_threshold {
                ActionLabel::Accelerate
            } else if a < -cfg.accel_threshold {
                ActionLabel::Decelerate
            } else {
                ActionLabel::KeepSpeed
            }
        })
        .collect()
}

/// Reference path: a polyline with per-vertex arc length.
struct Reference {
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
}

impl Reference {
    fn new(core: Vec<[f64; 2]>) -> Self {
        let first = core[1];
        let origin = core[0];
        let back = {
            let (dx, dy) = (first[0] - origin[0], first[1] - origin[1]);
            let len = dx.hypot(dy).max(1e-12);
            [origin[0] - 50.0 * dx / len, origin[1] - 50.0 * dy / len]
        };
        let ahead = {
            let (a, b) = (core[core.len() - 2], core[core.len() - 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy).max(1e-12);
            [b[0] + 200.0 * dx / len, b[1] + 200.0 * dy / len]
        };
        let mut points = vec![back];
        points.extend(core);
        points.push(ahead);
        points.dedup();
        let mut arc = vec![0.0];
        for w in points.windows(2) {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            arc.push(arc[arc.len() - 1] + len);
        }
        Self { points, arc }
    }

    /// `(arc length, signed offset left of the path)` of the nearest point.
    fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let u = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let q = [a[0] + u * dx, a[1] + u * dy];
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            if d < best.0 {
                let len = len2.sqrt();
                let cross = (dx * (p[1] - a[1]) - dy * (p[0] - a[0])) / len;
                best = (d, self.arc[i] + u * len, cross);
            }
        }
        (best.1, best.2)
    }
}

fn reference(route: Option<&Route>) -> Reference {
    match route {
        Some(r) => {
            let mut core = vec![[0.0, 0.0]];
            core.extend_from_slice(r.waypoints());
            Reference::new(core)
        }
        // Ego frame: the initial heading line is the x-axis.
        None => Reference::new(vec![[0.0, 0.0], [1.0, 0.0]]),
    }
}

fn unwrapped_headings(poses: &[Pose]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(poses.len());
    for p in poses {
        let h = match out.last() {
            Some(&prev) => prev + wrap_angle(p.heading - prev),
            None => p.heading,
        };
        out.push(h);
    }
    out
}

fn lateral(headings: &[f64], cfg: &LabelerConfig) -> Vec<ActionLabel> {
    let rates: Vec<f64> = headings
        .windows(2)
        .map(|w| (w[1] - w[0]) / STEP_SECONDS)
        .collect();
    smooth(&rates, cfg.smoothing_bins())
        .into_iter()
        .map(|rate| {
            let change = rate * cfg.turn_window;
            if change > cfg.turn_threshold {
                ActionLabel::LeftTurn
            } else if change < -cfg.turn_threshold {
                ActionLabel::RightTurn
            } else {
                ActionLabel::Straight
            }
        })
        .collect()
}

fn lane(offsets: &[f64], cfg: &LabelerConfig) -> Vec<ActionLabel> {
    let n = offsets.len() - 1;
    let sign = |b: usize| {
        let rate = (offsets[b + 1] - offsets[b]) / STEP_SECONDS;
        if rate > cfg.lane_drift_rate {
            1
        } else if rate < -cfg.lane_drift_rate {
            -1
        } else {
            0
        }
    };
    let mut labels = vec![ActionLabel::KeepLane; n];
    let mut b = 0;
    while b < n {
        let dir = sign(b);
        if dir == 0 {
            b += 1;
            continue;
        }
        let start = b;
        while b < n && sign(b) == dir {
            b += 1;
        }
        let net = offsets[b] - offsets[start];
        if net.abs() >= cfg.lane_shift {
            let label = if net > 0.0 {
                ActionLabel::LeftLaneChange
            } else {
                ActionLabel::RightLaneChange
            };
            labels[start..b].fill(label);
        }
    }
    labels
}

/// Repeatedly folds the shortest too-short run into its longer neighbor
/// (the earlier one on ties) until every run meets `min_bins`.
fn absorb_short(labels: &mut [ActionLabel], min_bins: usize) {
    loop {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[start] {
                runs.push((start, i));
                start = i;
            }
        }
        if runs.len() < 2 {
            return;
        }
        let Some((idx, _)) = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 - r.0 < min_bins)
            .min_by_key(|(i, r)| (r.1 - r.0, *i))
        else {
            return;
        };
        let len = |k: usize| runs[k].1 - runs[k].0;
        let target = match (
            idx.checked_sub(1),
            (idx + 1 < runs.len()).then_some(idx + 1),
        ) {
            (Some(p), Some(n)) => {
                if len(n) > len(p) {
                    n
                } else {
                    p
                }
            }
            (Some(p), None) => p,
            (None, Some(n)) => n,
            (None, None) => return,
        };
        let label = labels[runs[target].0];
        labels[runs[idx].0..runs[idx].1].fill(label);
    }
}

/// Labels a 64-pose expert future. Always yields a valid three-group plan.
pub fn label_scene(
    traj: &Trajectory,
    history: &History,
    route: Option<&Route>,
    cfg: &LabelerConfig,
) -> MetaActionPlan {
    let poses = timeline_poses(traj);
    let reference = reference(route);
    let projected: Vec<(f64, f64)> = poses.iter().map(|p| reference.project(p.xy())).collect();
    let headings = unwrapped_headings(&poses);
    let offsets: Vec<f64> = projected.iter().map(|&(_, l)| l).collect();

    let lanes = lane(&offsets, cfg);
    let mut turns = lateral(&headings, cfg);
    // A lane change swings the heading out and back; that is not a turn.
    for (t, l) in turns.iter_mut().zip(&lanes) {
        if *l != ActionLabel::KeepLane {
            *t = ActionLabel::Straight;
        }
    }
    let mut groups = [longitudinal(&poses, history, cfg), turns, lanes];
    let min_bins = cfg.min_bins();
    let timelines = ActionGroup::ALL
        .iter()
        .zip(groups.iter_mut())
        .map(|(&group, labels)| {
            absorb_short(labels, min_bins);
            let mut bins = [group.neutral(); BINS];
            for (slot, label) in bins.iter_mut().zip(labels.iter()) {
                *slot = *label;
            }
            GroupTimeline::from_bins(group, &bins)
                .unwrap_or_else(|_| GroupTimeline::constant(group.neutral()))
        });
    MetaActionPlan::from_timelines(timelines.collect::<Vec<_>>())
        .unwrap_or_else(|_| MetaActionPlan::cruise())
}
