//! Bin-wise kinematic integration shared by scenario synthesis and the mock
//! plan decoder.
//!
//! A base path is integrated from per-bin longitudinal controls and yaw
//! rates; lane shifts are applied as a smoothstep lateral offset along the
//! base path's left normal.

use crate::metaction::HORIZON_BINS;
use crate::trajgeo::{
    wrap_angle, GeoError, Pose, Route, Trajectory, ROUTE_POINTS, ROUTE_SPACING, STEP_SECONDS,
};

const BINS: usize = HORIZON_BINS as usize;
/// Below this speed the vehicle does not yaw.
const YAW_MIN_SPEED: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LongControl {
    /// Constant acceleration; forward motion never reverses through zero.
    Accel(f64),
    /// Speed clamped to zero for the bin.
    Halt,
    /// Speed set to a constant (negative = reversing).
    Speed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinControl {
    pub long: LongControl,
    pub yaw_rate: f64,
}

impl Default for BinControl {
    fn default() -> Self {
        Self {
            long: LongControl::Accel(0.0),
            yaw_rate: 0.0,
        }
    }
}

/// Signed lateral shift (left positive) spread over `[start, end)` bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneShift {
    pub start: u8,
    pub end: u8,
    pub offset: f64,
}

pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Cumulative lateral offset at time `t` seconds.
pub fn lane_offset(shifts: &[LaneShift], t: f64) -> f64 {
    shifts
        .iter()
        .map(|s| {
            let t0 = f64::from(s.start) * STEP_SECONDS;
            let t1 = f64::from(s.end) * STEP_SECONDS;
            s.offset * smoothstep((t - t0) / (t1 - t0))
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct Integrated {
    pub trajectory: Trajectory,
    /// Base-path positions at `t = 0, 0.1, …, 6.4` (65 points).
    pub base: Vec<[f64; 2]>,
    pub base_heading: Vec<f64>,
}

pub fn integrate(initial_speed: f64, controls: &[BinControl], shifts: &[LaneShift]) -> Integrated {
    assert_eq!(controls.len(), BINS, "one control per bin");
    let dt = STEP_SECONDS;
    let (mut x, mut y, mut theta, mut v) = (0.0f64, 0.0f64, 0.0f64, initial_speed);
    let mut base = Vec::with_capacity(BINS + 1);
    let mut base_heading = Vec::with_capacity(BINS + 1);
    base.push([x, y]);
    base_heading.push(theta);
    let mut poses = Vec::with_capacity(BINS);
    let mut prev_offset = lane_offset(shifts, 0.0);

    for (i, ctl) in controls.iter().enumerate() {
        let (ds, v_next) = match ctl.long {
            LongControl::Accel(a) => advance(v, a, dt),
            LongControl::Halt => (0.0, 0.0),
            LongControl::Speed(target) => (target * dt, target),
        };
        let moving = v.abs().max(v_next.abs()) >= YAW_MIN_SPEED;
        let dtheta = if moving { ctl.yaw_rate * dt } else { 0.0 };
        let mid = theta + dtheta / 2.0;
        x += ds * mid.cos();
        y += ds * mid.sin();
        theta += dtheta;
        v = v_next;
        base.push([x, y]);
        base_heading.push(theta);

        let t = (i + 1) as f64 * dt;
        let offset = lane_offset(shifts, t);
        let (s, c) = theta.sin_cos();
        let px = x - offset * s;
        let py = y + offset * c;
        let heading = if ds.abs() > 1e-6 {
            theta + ((offset - prev_offset) / ds).atan()
        } else {
            theta
        };
        prev_offset = offset;
        poses.push(Pose::new(px, py, 0.0, wrap_angle(heading)));
    }
    Integrated {
        trajectory: Trajectory::new(poses).expect("integration yields finite poses"),
        base,
        base_heading,
    }
}

/// Distance covered and final speed under constant acceleration, never
/// crossing zero speed.
fn advance(v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v_end = v + a * dt;
    let stops = (v >= 0.0 && v_end < 0.0) || (v < 0.0 && v_end > 0.0);
    if !stops {
        (v * dt + 0.5 * a * dt * dt, v_end)
    } else if v == 0.0 {
        (0.0, 0.0)
    } else {
        let t_stop = -v / a;
        (v * t_stop + 0.5 * a * t_stop * t_stop, 0.0)
    }
}

/// Samples 20 waypoints at 4 m arc spacing along a polyline starting at the
/// origin, extending past its end along the final heading.
pub fn route_along(base: &[[f64; 2]], final_heading: f64) -> Result<Route, GeoError> {
    let mut cumulative = vec![0.0];
    for w in base.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cumulative.push(cumulative[cumulative.len() - 1] + d);
    }
    let total = cumulative[cumulative.len() - 1];
    let end = base[base.len() - 1];
    let (s, c) = final_heading.sin_cos();
    let mut waypoints = Vec::with_capacity(ROUTE_POINTS);
    let mut seg = 0;
    for k in 1..=ROUTE_POINTS {
        let target = k as f64 * ROUTE_SPACING;
        if target >= total {
            let extra = target - total;
            waypoints.push([end[0] + extra * c, end[1] + extra * s]);
            continue;
        }
        while cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let u = if span > 0.0 {
            (target - cumulative[seg]) / span
        } else {
            0.0
        };
        let (a, b) = (base[seg], base[seg + 1]);
        waypoints.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
    }
    Route::new(waypoints)
}
