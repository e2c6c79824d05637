//! Desk trajectory tokenizer: a least-squares cubic through the origin per
//! axis, each coefficient quantized to one of 1024 levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::trajgeo::{wrap_angle, Pose, Trajectory, FUTURE_STEPS, STEP_SECONDS};

pub const TOKEN_LEVELS: u16 = 1024;
/// `[lo, hi]` for the linear, quadratic and cubic coefficient of each axis.
pub const COEFFICIENT_RANGES: [(f64, f64); 3] = [(-25.0, 25.0), (-5.0, 5.0), (-1.0, 1.0)];

/// Six token ids: x coefficients then y coefficients, lowest order first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u16>", into = "Vec<u16>")]
pub struct TrajTokens([u16; 6]);

impl TrajTokens {
    pub fn new(ids: [u16; 6]) -> Result<Self, CodecError> {
        if let Some(bad) = ids.iter().find(|&&id| id >= TOKEN_LEVELS) {
            return Err(CodecError::InvalidTokenId(bad.to_string()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> [u16; 6] {
        self.0
    }
}

impl TryFrom<Vec<u16>> for TrajTokens {
    type Error = CodecError;

    fn try_from(v: Vec<u16>) -> Result<Self, Self::Error> {
        let ids: [u16; 6] = v
            .as_slice()
            .try_into()
            .map_err(|_| CodecError::TokenCountMismatch { found: v.len() })?;
        Self::new(ids)
    }
}

impl From<TrajTokens> for Vec<u16> {
    fn from(t: TrajTokens) -> Self {
        t.0.to_vec()
    }
}

impl fmt::Display for TrajTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "t{id}")?;
        }
        Ok(())
    }
}

fn parse_token(raw: &str) -> Result<u16, CodecError> {
    let digits = raw.strip_prefix('t').unwrap_or(raw);
    match digits.parse::<u16>() {
        Ok(id) if id < TOKEN_LEVELS && !digits.starts_with('+') => Ok(id),
        _ => Err(CodecError::InvalidTokenId(raw.to_string())),
    }
}

impl FromStr for TrajTokens {
    type Err = CodecError;

    /// Whitespace-separated ids, each `t<id>` or a bare number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ids = s
            .split_whitespace()
            .map(parse_token)
            .collect::<Result<Vec<u16>, _>>()?;
        ids.try_into()
    }
}

fn times() -> impl Iterator<Item = f64> {
    (1..=FUTURE_STEPS).map(|i| i as f64 * STEP_SECONDS)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *slot = det(mc) / d;
    }
    out
}

/// Least-squares `(a1, a2, a3)` per axis for `p(t) = a1 t + a2 t² + a3 t³`
/// over the 64 future sample times.
pub fn fit_coefficients(traj: &Trajectory) -> [[f64; 3]; 2] {
    let mut m = [[0.0; 3]; 3];
    let mut bx = [0.0; 3];
    let mut by = [0.0; 3];
    for (t, p) in times().zip(traj.poses()) {
        let basis = [t, t * t, t * t * t];
        for j in 0..3 {
            for k in 0..3 {
                m[j][k] += basis[j] * basis[k];
            }
            bx[j] += basis[j] * p.x;
            by[j] += basis[j] * p.y;
        }
    }
    [solve3(m, bx), solve3(m, by)]
}

fn step(k: usize) -> f64 {
    let (lo, hi) = COEFFICIENT_RANGES[k];
    (hi - lo) / f64::from(TOKEN_LEVELS)
}

fn level_value(k: usize, id: u16) -> f64 {
    COEFFICIENT_RANGES[k].0 + f64::from(id) * step(k)
}

fn quantize(coeffs: [[f64; 3]; 2]) -> ([u16; 6], Option<CodecError>) {
    let mut ids = [0u16; 6];
    let mut clamped = None;
    for axis in 0..2 {
        for k in 0..3 {
            let (lo, hi) = COEFFICIENT_RANGES[k];
            let value = coeffs[axis][k];
            if !(lo..=hi).contains(&value) && clamped.is_none() {
                clamped = Some(CodecError::OutOfRangeCoefficient {
                    index: axis * 3 + k,
                    value,
                    lo,
                    hi,
                });
            }
            let level = ((value - lo) / step(k))
                .round()
                .clamp(0.0, f64::from(TOKEN_LEVELS - 1));
            ids[axis * 3 + k] = level as u16;
        }
    }
    (ids, clamped)
}

/// Tokenizes, failing when a coefficient falls outside its range.
pub fn tokenize_traj(traj: &Trajectory) -> Result<TrajTokens, CodecError> {
    match quantize(fit_coefficients(traj)) {
        (_, Some(err)) => Err(err),
        (ids, None) => Ok(TrajTokens(ids)),
    }
}

/// Tokenizes with out-of-range coefficients clamped; the flag reports
/// whether clamping happened.
pub fn tokenize_traj_clamped(traj: &Trajectory) -> (TrajTokens, bool) {
    let (ids, clamped) = quantize(fit_coefficients(traj));
    (TrajTokens(ids), clamped.is_some())
}

/// Below this speed (m/s) the fitted tangent is mostly fit error, so the
/// heading holds.
const HEADING_MIN_SPEED: f64 = 0.2;

/// Samples the 64 future poses of the polynomial. Headings follow the
/// tangent, pick the orientation closest to the previous heading (so
/// reversing keeps the car facing forward) and hold while nearly stationary.
pub fn detokenize_traj(tokens: &TrajTokens) -> Trajectory {
    let c: Vec<f64> = (0..6).map(|i| level_value(i % 3, tokens.0[i])).collect();
    let (cx, cy) = ([c[0], c[1], c[2]], [c[3], c[4], c[5]]);
    let eval = |a: [f64; 3], t: f64| a[0] * t + a[1] * t * t + a[2] * t * t * t;
    let slope = |a: [f64; 3], t: f64| a[0] + 2.0 * a[1] * t + 3.0 * a[2] * t * t;
    let mut heading = 0.0;
    let poses = times()
        .map(|t| {
            let (vx, vy) = (slope(cx, t), slope(cy, t));
            if vx.hypot(vy) > HEADING_MIN_SPEED {
                let tangent = vy.atan2(vx);
                heading = if (tangent - heading).cos() < 0.0 {
                    wrap_angle(tangent + std::f64::consts::PI)
                } else {
                    tangent
                };
            }
            Pose::new(eval(cx, t), eval(cy, t), 0.0, heading)
        })
        .collect();
    Trajectory::new(poses).expect("polynomial samples are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgeo::ade;

    fn line(speed: f64) -> Trajectory {
        Trajectory::new(times().map(|t| Pose::planar(speed * t, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn straight_round_trip() {
        let traj = line(10.0);
        let tokens = tokenize_traj(&traj).unwrap();
        assert!(ade(&detokenize_traj(&tokens), &traj).unwrap() < 0.05);
    }

    #[test]
    fn zero_trajectory_is_grid_center() {
        let traj = line(0.0);
        let tokens = tokenize_traj(&traj).unwrap();
        assert_eq!(tokens.ids(), [512; 6]);
        assert_eq!(detokenize_traj(&tokens), traj);
    }

    #[test]
    fn cubic_fit_is_exact_on_cubics() {
        let traj = Trajectory::new(
            times()
                .map(|t| Pose::planar(3.0 * t - 0.5 * t * t + 0.02 * t * t * t, 0.1 * t * t, 0.0))
                .collect(),
        )
        .unwrap();
        let [cx, cy] = fit_coefficients(&traj);
        for (got, want) in cx.iter().chain(&cy).zip([3.0, -0.5, 0.02, 0.0, 0.1, 0.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn out_of_range_is_flagged() {
        let traj = line(40.0);
        assert!(matches!(
            tokenize_traj(&traj),
            Err(CodecError::OutOfRangeCoefficient { index: 0, .. })
        ));
        let (tokens, clamped) = tokenize_traj_clamped(&traj);
        assert!(clamped);
        assert_eq!(tokens.ids()[0], 1023);
    }

    #[test]
    fn text_round_trip() {
        let tokens = TrajTokens::new([1, 2, 3, 1023, 0, 512]).unwrap();
        assert_eq!(tokens.to_string(), "t1 t2 t3 t1023 t0 t512");
        assert_eq!(tokens.to_string().parse::<TrajTokens>().unwrap(), tokens);
        assert_eq!("1 2 3 1023 0 512".parse::<TrajTokens>().unwrap(), tokens);
        assert!(matches!(
            "t1 t2".parse::<TrajTokens>(),
            Err(CodecError::TokenCountMismatch { found: 2 })
        ));
        assert!(matches!(
            "t1 t2 t3 t4 t5 t1024".parse::<TrajTokens>(),
            Err(CodecError::InvalidTokenId(_))
        ));
        assert!(matches!(
            "t1 t2 t3 t4 t5 x".parse::<TrajTokens>(),
            Err(CodecError::InvalidTokenId(_))
        ));
    }
}
