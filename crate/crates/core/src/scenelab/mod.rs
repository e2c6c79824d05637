//! Synthetic driving scenarios, the kinematic meta-action labeler, seeded
//! plan perturbation and the plan-to-trajectory decoder used by mock
//! policies.

pub mod kinematics;
mod labeler;
mod perturb;
mod suite;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metaction::{
    ActionGroup, ActionLabel, GroupTimeline, MetaActionPlan, PlanError, HORIZON_BINS,
};
use crate::seed;
use crate::trajgeo::{
    AgentTrack, GeoError, History, Pose, RoadBoundary, Route, Trajectory, VehicleFootprint,
    FUTURE_STEPS, HISTORY_STEPS, STEP_SECONDS,
};
use kinematics::{integrate, route_along, BinControl, LaneShift, LongControl};

pub use labeler::{label_scene, LabelerConfig};
pub use perturb::perturb_plan;
pub use suite::{suite_script, synth_suite, ScriptSuite};

const BINS: usize = HORIZON_BINS as usize;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("script covers {bins} bins, the horizon needs {HORIZON_BINS}")]
    ScriptTooShort { bins: u32 },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid labeler config: {0}")]
    InvalidConfig(String),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Mock-decoder controls per label.
pub mod controls {
    pub const ACCELERATE: f64 = 1.5;
    pub const DECELERATE: f64 = -2.0;
    pub const REVERSE_SPEED: f64 = -1.0;
    pub const TURN_RATE: f64 = 0.3;
    pub const LANE_WIDTH: f64 = 3.5;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongitudinalProfile {
    /// Target acceleration in m/s².
    Accel(f64),
    /// Standing still.
    Halt,
    /// Constant signed speed in m/s.
    Speed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub longitudinal: ActionLabel,
    pub lateral: ActionLabel,
    pub lane: ActionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSegment {
    /// Duration in deciseconds.
    pub duration: u32,
    pub longitudinal: LongitudinalProfile,
    /// rad/s, counter-clockwise positive.
    #[serde(default)]
    pub yaw_rate: f64,
    /// Lateral shift in meters completed over the segment (left positive).
    #[serde(default)]
    pub lane_shift: f64,
    pub labels: SegmentLabels,
}

/// A road user following a fixed straight track, optionally shifting lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub footprint: VehicleFootprint,
    pub start: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    #[serde(default)]
    pub accel: f64,
    /// `(start bin, end bin, meters)` lateral shift, left of the agent positive.
    #[serde(default)]
    pub lane_shift: Option<(u8, u8, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    /// Drivable width left of the ego lane center, meters.
    pub left: f64,
    pub right: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            left: 2.75,
            right: 2.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverScript {
    pub name: String,
    pub odd_tag: String,
    pub initial_speed: f64,
    pub segments: Vec<ManeuverSegment>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub road: RoadSpec,
    #[serde(default = "yes")]
    pub include_route: bool,
}

fn yes() -> bool {
    true
}

impl ManeuverScript {
    pub fn total_bins(&self) -> u32 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let total = self.total_bins();
        if total < u32::from(HORIZON_BINS) {
            return Err(ScenarioError::ScriptTooShort { bins: total });
        }
        if !self.initial_speed.is_finite() {
            return Err(ScenarioError::InvalidScript(
                "non-finite initial speed".into(),
            ));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let finite = match seg.longitudinal {
                LongitudinalProfile::Accel(a) | LongitudinalProfile::Speed(a) => a.is_finite(),
                LongitudinalProfile::Halt => true,
            };
            if !finite || !seg.yaw_rate.is_finite() || !seg.lane_shift.is_finite() {
                return Err(ScenarioError::InvalidScript(format!(
                    "segment {i} has a non-finite profile"
                )));
            }
            let groups = [
                (ActionGroup::Longitudinal, seg.labels.longitudinal),
                (ActionGroup::Lateral, seg.labels.lateral),
                (ActionGroup::Lane, seg.labels.lane),
            ];
            for (g, l) in groups {
                if l.group() != g {
                    return Err(ScenarioError::InvalidScript(format!(
                        "segment {i}: {l} is not a {g} label"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The unit of curation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub history: History,
    pub expert_future: Trajectory,
    #[serde(default)]
    pub route: Option<Route>,
    #[serde(default)]
    pub agents: Vec<AgentTrack>,
    pub boundary: RoadBoundary,
    pub gt_plan: MetaActionPlan,
    #[serde(default)]
    pub odd_tag: String,
}

impl Scene {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.expert_future.len() != FUTURE_STEPS {
            return Err(GeoError::InvalidTrajectory(format!(
                "expert future has {} poses",
                self.expert_future.len()
            )));
        }
        if self.history.poses().len() != HISTORY_STEPS {
            return Err(GeoError::InvalidTrajectory("history length".into()));
        }
        for agent in &self.agents {
            if agent.trajectory.len() != FUTURE_STEPS {
                return Err(GeoError::ClockMismatch {
                    agent: agent.id.clone(),
                    agent_len: agent.trajectory.len(),
                    ego_len: FUTURE_STEPS,
                });
            }
        }
        Ok(())
    }
}

struct Expanded {
    controls: Vec<BinControl>,
    shifts: Vec<LaneShift>,
    labels: [[ActionLabel; BINS]; 3],
}

fn expand(script: &ManeuverScript) -> Expanded {
    let mut controls = Vec::with_capacity(BINS);
    let mut shifts = Vec::new();
    let mut labels = [
        [ActionLabel::KeepSpeed; BINS],
        [ActionLabel::Straight; BINS],
        [ActionLabel::KeepLane; BINS],
    ];
    let mut start = 0u32;
    for seg in &script.segments {
        if start >= BINS as u32 {
            break;
        }
        let end = start + seg.duration;
        if seg.lane_shift != 0.0 {
            shifts.push(LaneShift {
                start: start as u8,
                end: end.min(255) as u8,
                offset: seg.lane_shift,
            });
        }
        let long = match seg.longitudinal {
            LongitudinalProfile::Accel(a) => LongControl::Accel(a),
            LongitudinalProfile::Halt => LongControl::Halt,
            LongitudinalProfile::Speed(v) => LongControl::Speed(v),
        };
        for bin in start..end.min(BINS as u32) {
            let b = bin as usize;
            controls.push(BinControl {
                long,
                yaw_rate: seg.yaw_rate,
            });
            labels[0][b] = seg.labels.longitudinal;
            labels[1][b] = seg.labels.lateral;
            labels[2][b] = seg.labels.lane;
        }
        start = end;
    }
    Expanded {
        controls,
        shifts,
        labels,
    }
}

fn agent_track(spec: &AgentSpec, jitter: f64) -> Result<AgentTrack, GeoError> {
    let (s, c) = spec.heading.sin_cos();
    let mut along = 0.0;
    let mut v = spec.speed;
    let mut poses = Vec::with_capacity(FUTURE_STEPS);
    for i in 0..FUTURE_STEPS {
        let v_next = (v + spec.accel * STEP_SECONDS).max(0.0);
        along += 0.5 * (v + v_next) * STEP_SECONDS;
        v = v_next;
        let t = (i + 1) as f64 * STEP_SECONDS;
        let (lateral, lateral_rate) = match spec.lane_shift {
            Some((b0, b1, amount)) => {
                let shift = [LaneShift {
                    start: b0,
                    end: b1,
                    offset: amount,
                }];
                let now = kinematics::lane_offset(&shift, t);
                let before = kinematics::lane_offset(&shift, t - STEP_SECONDS);
                (now, (now - before) / STEP_SECONDS)
            }
            None => (0.0, 0.0),
        };
        let base = [
            spec.start[0] + jitter * c + along * c,
            spec.start[1] + jitter * s + along * s,
        ];
        let heading = if v > 0.1 {
            spec.heading + (lateral_rate / v).atan()
        } else {
            spec.heading
        };
        poses.push(Pose::planar(
            base[0] - lateral * s,
            base[1] + lateral * c,
            heading,
        ));
    }
    Ok(AgentTrack {
        id: spec.id.clone(),
        footprint: spec.footprint,
        trajectory: Trajectory::new(poses)?,
    })
}

/// Corridor polygon around a centerline offset `left`/`right` meters.
pub fn corridor(centerline: &[[f64; 2]], left: f64, right: f64) -> Result<RoadBoundary, GeoError> {
    let n = centerline.len();
    let normals: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = centerline[i.saturating_sub(1)];
            let b = centerline[(i + 1).min(n - 1)];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy).max(1e-12);
            [-dy / len, dx / len]
        })
        .collect();
    let mut vertices: Vec<[f64; 2]> = centerline
        .iter()
        .zip(&normals)
        .map(|(p, nrm)| [p[0] + left * nrm[0], p[1] + left * nrm[1]])
        .collect();
    vertices.extend(
        centerline
            .iter()
            .zip(&normals)
            .rev()
            .map(|(p, nrm)| [p[0] - right * nrm[0], p[1] - right * nrm[1]]),
    );
    RoadBoundary::new(vertices)
}

fn road_centerline(route: Option<&Route>) -> Vec<[f64; 2]> {
    let mut line = vec![[-20.0, 0.0], [0.0, 0.0]];
    match route {
        Some(r) => {
            line.extend_from_slice(r.waypoints());
            let w = r.waypoints();
            let (a, b) = (w[w.len() - 2], w[w.len() - 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            line.push([b[0] + 60.0 * dx / len, b[1] + 60.0 * dy / len]);
        }
        None => line.push([140.0, 0.0]),
    }
    line
}

/// Integrates a script at 10 Hz into a complete scene. Deterministic per
/// `(script, seed)`; the seed only jitters agent start positions.
pub fn synth_scene(script: &ManeuverScript, seed: u64) -> Result<Scene, ScenarioError> {
    script.validate()?;
    let expanded = expand(script);
    let out = integrate(script.initial_speed, &expanded.controls, &expanded.shifts);
    let route = if script.include_route {
        Some(route_along(&out.base, out.base_heading[BINS])?)
    } else {
        None
    };
    let mut rng = seed::rng(seed::derive_seed(seed, &script.name, 0));
    let agents = script
        .agents
        .iter()
        .map(|spec| agent_track(spec, rng.random_range(-1.0..=1.0)))
        .collect::<Result<Vec<_>, _>>()?;
    let boundary = corridor(
        &road_centerline(route.as_ref()),
        script.road.left,
        script.road.right,
    )?;
    let timelines = ActionGroup::ALL
        .iter()
        .zip(expanded.labels.iter())
        .map(|(g, bins)| GroupTimeline::from_bins(*g, bins))
        .collect::<Result<Vec<_>, _>>()?;
    let scene = Scene {
        id: format!("{}-{seed}", script.name),
        history: History::constant_speed(script.initial_speed),
        expert_future: out.trajectory,
        route,
        agents,
        boundary,
        gt_plan: MetaActionPlan::from_timelines(timelines)?,
        odd_tag: script.odd_tag.clone(),
    };
    Ok(scene)
}

/// Per-bin controls implied by a plan under the fixed mock control table.
pub fn plan_controls(plan: &MetaActionPlan) -> (Vec<BinControl>, Vec<LaneShift>) {
    let lon = plan
        .timeline(ActionGroup::Longitudinal)
        .map(GroupTimeline::bins)
        .unwrap_or([ActionLabel::KeepSpeed; BINS]);
    let lat = plan
        .timeline(ActionGroup::Lateral)
        .map(GroupTimeline::bins)
        .unwrap_or([ActionLabel::Straight; BINS]);
    let controls = lon
        .iter()
        .zip(lat.iter())
        .map(|(l, t)| BinControl {
            long: match l {
                ActionLabel::Accelerate => LongControl::Accel(controls::ACCELERATE),
                ActionLabel::Decelerate => LongControl::Accel(controls::DECELERATE),
                ActionLabel::Wait => LongControl::Halt,
                ActionLabel::Reverse => LongControl::Speed(controls::REVERSE_SPEED),
                _ => LongControl::Accel(0.0),
            },
            yaw_rate: match t {
                ActionLabel::LeftTurn => controls::TURN_RATE,
                ActionLabel::RightTurn => -controls::TURN_RATE,
                _ => 0.0,
            },
        })
        .collect();
    let shifts = plan
        .timeline(ActionGroup::Lane)
        .map(|tl| {
            tl.segments()
                .iter()
                .filter_map(|s| {
                    let offset = match s.label {
                        ActionLabel::LeftLaneChange => controls::LANE_WIDTH,
                        ActionLabel::RightLaneChange => -controls::LANE_WIDTH,
                        _ => return None,
                    };
                    Some(LaneShift {
                        start: s.start,
                        end: s.end,
                        offset,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    (controls, shifts)
}

/// Decodes a plan into a trajectory from the history's terminal state, then
/// adds seeded Gaussian waypoint noise (`noise` meters, per axis).
pub fn decode_plan_to_traj(
    plan: &MetaActionPlan,
    history: &History,
    seed: u64,
    noise: f64,
) -> Trajectory {
    let (ctl, shifts) = plan_controls(plan);
    let clean = integrate(history.terminal_speed(), &ctl, &shifts).trajectory;
    if noise <= 0.0 {
        return clean;
    }
    let normal = Normal::new(0.0, noise).expect("positive finite noise scale");
    let mut rng = seed::rng(seed);
    let poses = clean
        .poses()
        .iter()
        .map(|p| {
            Pose::new(
                p.x + normal.sample(&mut rng),
                p.y + normal.sample(&mut rng),
                p.z,
                p.heading,
            )
        })
        .collect();
    Trajectory::new(poses).expect("noise keeps poses finite")
}
