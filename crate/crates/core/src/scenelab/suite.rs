//! Seeded scenario suites. Every scripted signal clears its labeler threshold
//! by at least a factor of two and every segment lasts at least one second.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::controls::{ACCELERATE, DECELERATE, LANE_WIDTH, TURN_RATE};
use super::{
    synth_scene, AgentSpec, LongitudinalProfile, ManeuverScript, ManeuverSegment, RoadSpec,
    ScenarioError, Scene, SegmentLabels, BINS,
};
use crate::metaction::ActionLabel::{self, *};
use crate::par;
use crate::seed;
use crate::trajgeo::VehicleFootprint;

const MIN_SEG: u32 = 10;
const HALF_LANE: f64 = LANE_WIDTH / 2.0;
const SHOULDER: f64 = 0.5;
const TURN_APRON: f64 = 1.0;
/// Moving segments never drop below this speed.
const MIN_MOVING_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScriptSuite {
    Straight,
    Following,
    LaneChange,
    Turn,
    VruStop,
    CutIn,
    Mixed,
}

impl ScriptSuite {
    pub const NAMED: [ScriptSuite; 6] = [
        ScriptSuite::Straight,
        ScriptSuite::Following,
        ScriptSuite::LaneChange,
        ScriptSuite::Turn,
        ScriptSuite::VruStop,
        ScriptSuite::CutIn,
    ];

    /// Suites drawn round-robin by `Mixed`.
    pub const MIXED_POOL: [ScriptSuite; 5] = [
        ScriptSuite::Following,
        ScriptSuite::LaneChange,
        ScriptSuite::Turn,
        ScriptSuite::VruStop,
        ScriptSuite::CutIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptSuite::Straight => "straight",
            ScriptSuite::Following => "following",
            ScriptSuite::LaneChange => "lane_change",
            ScriptSuite::Turn => "turn",
            ScriptSuite::VruStop => "vru_stop",
            ScriptSuite::CutIn => "cut_in",
            ScriptSuite::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ScriptSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScriptSuite {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::NAMED
            .iter()
            .chain(std::iter::once(&ScriptSuite::Mixed))
            .copied()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| ScenarioError::UnknownSuite(s.to_string()))
    }
}

fn segment(duration: u32, long: LongitudinalProfile, labels: [ActionLabel; 3]) -> ManeuverSegment {
    ManeuverSegment {
        duration,
        longitudinal: long,
        yaw_rate: 0.0,
        lane_shift: 0.0,
        labels: SegmentLabels {
            longitudinal: labels[0],
            lateral: labels[1],
            lane: labels[2],
        },
    }
}

fn cruise(duration: u32) -> ManeuverSegment {
    segment(
        duration,
        LongitudinalProfile::Accel(0.0),
        [KeepSpeed, Straight, KeepLane],
    )
}

/// Splits the horizon into `parts` durations of at least `MIN_SEG` bins.
fn split(rng: &mut ChaCha8Rng, parts: usize) -> Vec<u32> {
    let total = BINS as u32;
    let mut spare = total - MIN_SEG * parts as u32;
    let mut out = Vec::with_capacity(parts);
    for i in 0..parts {
        let extra = if i + 1 == parts {
            spare
        } else {
            rng.random_range(0..=spare)
        };
        spare -= extra;
        out.push(MIN_SEG + extra);
    }
    out
}

/// Longitudinal-only segments: keep, accelerate or brake with the speed held
/// above `MIN_MOVING_SPEED`. Also returns the peak speed.
fn longitudinal_segments(
    rng: &mut ChaCha8Rng,
    v0: f64,
    parts: usize,
) -> (Vec<ManeuverSegment>, f64) {
    let mut v = v0;
    let mut peak = v0;
    let mut prev = None;
    let mut out: Vec<ManeuverSegment> = Vec::new();
    for duration in split(rng, parts) {
        let secs = f64::from(duration) * 0.1;
        let options: Vec<ActionLabel> = [KeepSpeed, Accelerate, Decelerate]
            .into_iter()
            .filter(|&l| Some(l) != prev)
            .filter(|&l| l != Decelerate || v + DECELERATE * secs >= MIN_MOVING_SPEED)
            .filter(|&l| l != Accelerate || v + ACCELERATE * secs <= 25.0)
            .collect();
        let label = options[rng.random_range(0..options.len())];
        let a = match label {
            Accelerate => ACCELERATE,
            Decelerate => DECELERATE,
            _ => 0.0,
        };
        v += a * secs;
        peak = peak.max(v);
        out.push(segment(
            duration,
            LongitudinalProfile::Accel(a),
            [label, Straight, KeepLane],
        ));
        prev = Some(label);
    }
    (out, peak)
}

fn car(id: &str, start: [f64; 2], speed: f64) -> AgentSpec {
    AgentSpec {
        id: id.into(),
        footprint: VehicleFootprint::default(),
        start,
        heading: 0.0,
        speed,
        accel: 0.0,
        lane_shift: None,
    }
}

fn base_script(suite: ScriptSuite, v0: f64, segments: Vec<ManeuverSegment>) -> ManeuverScript {
    ManeuverScript {
        name: suite.name().into(),
        odd_tag: suite.name().into(),
        initial_speed: v0,
        segments,
        agents: vec![],
        road: RoadSpec {
            left: HALF_LANE + SHOULDER,
            right: HALF_LANE + SHOULDER,
        },
        include_route: true,
    }
}

/// Constant-speed lane keeping.
fn straight(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let v0 = rng.random_range(4.0..16.0);
    base_script(ScriptSuite::Straight, v0, vec![cruise(BINS as u32)])
}

/// A speed change behind a lead vehicle that never drops below the ego's
/// peak speed.
fn following(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let v0 = rng.random_range(6.0..14.0);
    let gap = rng.random_range(20.0..35.0);
    // One speed change keeps the profile within reach of the cubic tokenizer.
    let (segments, peak) = longitudinal_segments(rng, v0, 2);
    let mut script = base_script(ScriptSuite::Following, v0, segments);
    script.agents.push(car("lead", [gap, 0.0], peak + 0.5));
    script
}

fn lane_change(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let v0 = rng.random_range(8.0..15.0);
    let left = rng.random_bool(0.5);
    let change = rng.random_range(25..=35u32);
    let before = rng.random_range(MIN_SEG..=(BINS as u32 - change - MIN_SEG));
    let after = BINS as u32 - change - before;
    let (label, shift) = if left {
        (LeftLaneChange, LANE_WIDTH)
    } else {
        (RightLaneChange, -LANE_WIDTH)
    };
    let mut lc = cruise(change);
    lc.lane_shift = shift;
    lc.labels.lane = label;
    let mut script = base_script(
        ScriptSuite::LaneChange,
        v0,
        vec![cruise(before), lc, cruise(after)],
    );
    if left {
        script.road.left += LANE_WIDTH;
    } else {
        script.road.right += LANE_WIDTH;
    }
    // A slower vehicle in the original lane, far enough ahead to stay clear.
    let gap = rng.random_range(30.0..45.0);
    script.agents.push(car("slow", [gap, 0.0], v0 * 0.7));
    script
}

fn turn(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let v0 = rng.random_range(5.0..8.0);
    let left = rng.random_bool(0.5);
    let duration = rng.random_range(20..=30u32);
    let before = rng.random_range(MIN_SEG..=(BINS as u32 - duration - MIN_SEG));
    let after = BINS as u32 - duration - before;
    let (label, rate) = if left {
        (LeftTurn, TURN_RATE)
    } else {
        (RightTurn, -TURN_RATE)
    };
    let mut t = cruise(duration);
    t.yaw_rate = rate;
    t.labels.lateral = label;
    let mut script = base_script(
        ScriptSuite::Turn,
        v0,
        vec![cruise(before), t, cruise(after)],
    );
    // Junction-width road around the turn.
    script.road.left += TURN_APRON;
    script.road.right += TURN_APRON;
    script
}

fn vru_stop(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let braking = rng.random_range(20..=35u32);
    let before = rng.random_range(MIN_SEG..=(BINS as u32 - braking - MIN_SEG));
    let hold = BINS as u32 - braking - before;
    // Reaches 0.1 m/s exactly at the end of braking.
    let v0 = -DECELERATE * f64::from(braking) * 0.1 + 0.1;
    let travel = v0 * f64::from(before) * 0.1 + (v0 + 0.1) / 2.0 * f64::from(braking) * 0.1;
    let segments = vec![
        cruise(before),
        segment(
            braking,
            LongitudinalProfile::Accel(DECELERATE),
            [Decelerate, Straight, KeepLane],
        ),
        segment(hold, LongitudinalProfile::Halt, [Wait, Straight, KeepLane]),
    ];
    let mut script = base_script(ScriptSuite::VruStop, v0, segments);
    script.agents.push(AgentSpec {
        id: "pedestrian".into(),
        footprint: VehicleFootprint {
            length: 0.6,
            width: 0.6,
        },
        start: [
            travel + rng.random_range(6.0..9.0),
            rng.random_range(-0.5..0.5),
        ],
        heading: std::f64::consts::FRAC_PI_2,
        speed: 0.0,
        accel: 0.0,
        lane_shift: None,
    });
    script
}

fn cut_in(rng: &mut ChaCha8Rng) -> ManeuverScript {
    let v0 = rng.random_range(8.0..14.0);
    // Short enough to stay above walking pace and within tokenizer reach.
    let braking = rng.random_range(MIN_SEG..=20u32);
    let before = rng.random_range(MIN_SEG..=(BINS as u32 - braking - MIN_SEG));
    let after = BINS as u32 - braking - before;
    let segments = vec![
        cruise(before),
        segment(
            braking,
            LongitudinalProfile::Accel(DECELERATE),
            [Decelerate, Straight, KeepLane],
        ),
        cruise(after),
    ];
    let from_left = rng.random_bool(0.5);
    let side = if from_left { 1.0 } else { -1.0 };
    let mut script = base_script(ScriptSuite::CutIn, v0, segments);
    if from_left {
        script.road.left += LANE_WIDTH;
    } else {
        script.road.right += LANE_WIDTH;
    }
    let start_bin = rng.random_range(5..20u8);
    script.agents.push(AgentSpec {
        lane_shift: Some((start_bin, start_bin + 25, -side * LANE_WIDTH)),
        ..car(
            "cutter",
            [rng.random_range(15.0..25.0), side * LANE_WIDTH],
            v0 * 0.9,
        )
    });
    script
}

/// Script `index` of a suite; deterministic per `(suite, index, seed)`.
pub fn suite_script(suite: ScriptSuite, index: usize, seed: u64) -> ManeuverScript {
    let suite = match suite {
        ScriptSuite::Mixed => ScriptSuite::MIXED_POOL[index % ScriptSuite::MIXED_POOL.len()],
        named => named,
    };
    let mut rng = seed::rng(seed::derive_seed(seed, suite.name(), index as u64));
    let mut script = match suite {
        ScriptSuite::Straight => straight(&mut rng),
        ScriptSuite::Following => following(&mut rng),
        ScriptSuite::LaneChange => lane_change(&mut rng),
        ScriptSuite::Turn => turn(&mut rng),
        ScriptSuite::VruStop => vru_stop(&mut rng),
        ScriptSuite::CutIn => cut_in(&mut rng),
        ScriptSuite::Mixed => unreachable!("resolved above"),
    };
    script.name = format!("{}-{index:04}", suite.name());
    script
}

/// Synthesizes `count` scenes in parallel; ids are `<suite>-<index>`.
pub fn synth_suite(
    suite: ScriptSuite,
    count: usize,
    seed: u64,
) -> Result<Vec<Scene>, ScenarioError> {
    let indices: Vec<usize> = (0..count).collect();
    par::try_map_ordered(&indices, |&i| {
        let script = suite_script(suite, i, seed);
        let mut scene = synth_scene(&script, seed::derive_seed(seed, &script.name, 1))?;
        scene.id = script.name.clone();
        Ok(scene)
    })
}
