//! Time-segmented meta-action plans.
//!
//! A plan describes the ego vehicle's intent in up to three independent
//! groups (longitudinal, lateral, lane). Each present group is a timeline of
//! labeled segments that partitions the 6.4 s horizon. Time is kept as integer
//! deciseconds so that partition checks and the 64-bin comparison grid are
//! exact.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of 0.1 s bins in the planning horizon.
pub const HORIZON_BINS: u8 = 64;
/// Width of one bin in seconds.
pub const BIN_SECONDS: f64 = 0.1;

const GRID_TOLERANCE_BINS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionGroup {
    Longitudinal,
    Lateral,
    Lane,
}

impl ActionGroup {
    pub const ALL: [ActionGroup; 3] = [
        ActionGroup::Longitudinal,
        ActionGroup::Lateral,
        ActionGroup::Lane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionGroup::Longitudinal => "longitudinal",
            ActionGroup::Lateral => "lateral",
            ActionGroup::Lane => "lane",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Closed label vocabulary of the group.
    pub fn vocabulary(self) -> &'static [ActionLabel] {
        use ActionLabel::*;
        match self {
            ActionGroup::Longitudinal => &[Accelerate, Decelerate, KeepSpeed, Wait, Reverse],
            ActionGroup::Lateral => &[Straight, LeftTurn, RightTurn],
            ActionGroup::Lane => &[KeepLane, LeftLaneChange, RightLaneChange],
        }
    }

    /// Label used when a group carries no explicit intent.
    pub fn neutral(self) -> ActionLabel {
        match self {
            ActionGroup::Longitudinal => ActionLabel::KeepSpeed,
            ActionGroup::Lateral => ActionLabel::Straight,
            ActionGroup::Lane => ActionLabel::KeepLane,
        }
    }
}

impl fmt::Display for ActionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionLabel {
    Accelerate,
    Decelerate,
    KeepSpeed,
    Wait,
    Reverse,
    Straight,
    LeftTurn,
    RightTurn,
    KeepLane,
    LeftLaneChange,
    RightLaneChange,
}

impl ActionLabel {
    pub fn text(self) -> &'static str {
        use ActionLabel::*;
        match self {
            Accelerate => "Accelerate",
            Decelerate => "Decelerate",
            KeepSpeed => "Keep Speed",
            Wait => "Wait",
            Reverse => "Reverse",
            Straight => "Straight",
            LeftTurn => "Left Turn",
            RightTurn => "Right Turn",
            KeepLane => "Keep Lane",
            LeftLaneChange => "Left Lane Change",
            RightLaneChange => "Right Lane Change",
        }
    }

    pub fn group(self) -> ActionGroup {
        use ActionLabel::*;
        match self {
            Accelerate | Decelerate | KeepSpeed | Wait | Reverse => ActionGroup::Longitudinal,
            Straight | LeftTurn | RightTurn => ActionGroup::Lateral,
            KeepLane | LeftLaneChange | RightLaneChange => ActionGroup::Lane,
        }
    }

    /// Looks up a label by its exact text within one group's vocabulary.
    pub fn parse_in(group: ActionGroup, text: &str) -> Option<Self> {
        group
            .vocabulary()
            .iter()
            .copied()
            .find(|l| l.text() == text)
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("unknown label `{label}` for group {group}")]
    UnknownLabel { group: ActionGroup, label: String },
    #[error("time {value}s is not on the 0.1 s grid")]
    GridViolation { value: String },
    #[error("{group} timeline does not partition the horizon: {detail}")]
    PartitionViolation { group: ActionGroup, detail: String },
    #[error("plan has no groups")]
    EmptyPlan,
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

/// Half-open interval `[start, end)` in deciseconds with its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeSegment {
    pub start: u8,
    pub end: u8,
    pub label: ActionLabel,
}

impl TimeSegment {
    pub fn new(start: u8, end: u8, label: ActionLabel) -> Self {
        Self { start, end, label }
    }

    pub fn len(&self) -> u8 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One group's labeled partition of the horizon, always in canonical form
/// (adjacent segments carry distinct labels).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupTimeline {
    group: ActionGroup,
    segments: Vec<TimeSegment>,
}

impl GroupTimeline {
    /// Validates the partition and merges equal-label neighbors.
    pub fn new(group: ActionGroup, segments: Vec<TimeSegment>) -> Result<Self, PlanError> {
        let violation = |detail: String| PlanError::PartitionViolation { group, detail };
        if segments.is_empty() {
            return Err(violation("no segments".into()));
        }
        let mut expected = 0u8;
        for seg in &segments {
            if seg.label.group() != group {
                return Err(PlanError::UnknownLabel {
                    group,
                    label: seg.label.text().to_string(),
                });
            }
            if seg.start >= seg.end {
                return Err(violation(format!(
                    "empty interval [{}, {})",
                    seg.start, seg.end
                )));
            }
            if seg.end > HORIZON_BINS {
                return Err(violation(format!(
                    "interval ends past the horizon at {}",
                    seg.end
                )));
            }
            if seg.start > expected {
                return Err(violation(format!("gap at [{}, {})", expected, seg.start)));
            }
            if seg.start < expected {
                return Err(violation(format!(
                    "overlap at [{}, {})",
                    seg.start, expected
                )));
            }
            expected = seg.end;
        }
        if expected != HORIZON_BINS {
            return Err(violation(format!("horizon not covered after {expected}")));
        }
        Ok(Self {
            group,
            segments: merge_neighbors(segments),
        })
    }

    /// Single segment covering the whole horizon.
    pub fn constant(label: ActionLabel) -> Self {
        Self {
            group: label.group(),
            segments: vec![TimeSegment::new(0, HORIZON_BINS, label)],
        }
    }

    /// Rebuilds a canonical timeline from per-bin labels.
    pub fn from_bins(
        group: ActionGroup,
        bins: &[ActionLabel; HORIZON_BINS as usize],
    ) -> Result<Self, PlanError> {
        let mut segments = Vec::new();
        let mut start = 0usize;
        for i in 1..=bins.len() {
            if i == bins.len() || bins[i] != bins[start] {
                segments.push(TimeSegment::new(start as u8, i as u8, bins[start]));
                start = i;
            }
        }
        Self::new(group, segments)
    }

    pub fn group(&self) -> ActionGroup {
        self.group
    }

    pub fn segments(&self) -> &[TimeSegment] {
        &self.segments
    }

    /// Label of every decisecond bin.
    pub fn bins(&self) -> [ActionLabel; HORIZON_BINS as usize] {
        let mut out = [self.segments[0].label; HORIZON_BINS as usize];
        for seg in &self.segments {
            for slot in &mut out[seg.start as usize..seg.end as usize] {
                *slot = seg.label;
            }
        }
        out
    }

    pub fn label_at(&self, bin: u8) -> ActionLabel {
        self.segments
            .iter()
            .find(|s| s.start <= bin && bin < s.end)
            .map(|s| s.label)
            .unwrap_or(self.segments[self.segments.len() - 1].label)
    }
}

fn merge_neighbors(segments: Vec<TimeSegment>) -> Vec<TimeSegment> {
    let mut merged: Vec<TimeSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match merged.last_mut() {
            Some(prev) if prev.label == seg.label => prev.end = seg.end,
            _ => merged.push(seg),
        }
    }
    merged
}

/// Expands a timeline into its 64 per-bin labels.
pub fn bin_timeline(timeline: &GroupTimeline) -> [ActionLabel; HORIZON_BINS as usize] {
    timeline.bins()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaActionPlan {
    longitudinal: Option<GroupTimeline>,
    lateral: Option<GroupTimeline>,
    lane: Option<GroupTimeline>,
}

impl MetaActionPlan {
    pub fn new(
        longitudinal: Option<GroupTimeline>,
        lateral: Option<GroupTimeline>,
        lane: Option<GroupTimeline>,
    ) -> Result<Self, PlanError> {
        let plan = Self {
            longitudinal,
            lateral,
            lane,
        };
        if plan.timelines().next().is_none() {
            return Err(PlanError::EmptyPlan);
        }
        for (group, tl) in
            ActionGroup::ALL
                .iter()
                .zip([&plan.longitudinal, &plan.lateral, &plan.lane])
        {
            if let Some(tl) = tl {
                if tl.group() != *group {
                    return Err(PlanError::Malformed {
                        line: 0,
                        detail: format!("{} timeline stored in the {} slot", tl.group(), group),
                    });
                }
            }
        }
        Ok(plan)
    }

    /// Plan built from any set of timelines, keyed by their own groups.
    pub fn from_timelines(
        timelines: impl IntoIterator<Item = GroupTimeline>,
    ) -> Result<Self, PlanError> {
        let mut slots: [Option<GroupTimeline>; 3] = [None, None, None];
        for tl in timelines {
            let idx = tl.group() as usize;
            if slots[idx].is_some() {
                return Err(PlanError::Malformed {
                    line: 0,
                    detail: format!("duplicate {} group", tl.group()),
                });
            }
            slots[idx] = Some(tl);
        }
        let [lon, lat, lane] = slots;
        Self::new(lon, lat, lane)
    }

    /// Full-horizon `{Keep Speed, Straight, Keep Lane}`.
    pub fn cruise() -> Self {
        Self {
            longitudinal: Some(GroupTimeline::constant(ActionLabel::KeepSpeed)),
            lateral: Some(GroupTimeline::constant(ActionLabel::Straight)),
            lane: Some(GroupTimeline::constant(ActionLabel::KeepLane)),
        }
    }

    pub fn timeline(&self, group: ActionGroup) -> Option<&GroupTimeline> {
        match group {
            ActionGroup::Longitudinal => self.longitudinal.as_ref(),
            ActionGroup::Lateral => self.lateral.as_ref(),
            ActionGroup::Lane => self.lane.as_ref(),
        }
    }

    /// Present timelines in fixed group order.
    pub fn timelines(&self) -> impl Iterator<Item = &GroupTimeline> {
        [&self.longitudinal, &self.lateral, &self.lane]
            .into_iter()
            .filter_map(|t| t.as_ref())
    }

    /// Returns a copy with one group replaced (or removed with `None`).
    pub fn with_timeline(
        &self,
        group: ActionGroup,
        timeline: Option<GroupTimeline>,
    ) -> Result<Self, PlanError> {
        let mut next = self.clone();
        let slot = match group {
            ActionGroup::Longitudinal => &mut next.longitudinal,
            ActionGroup::Lateral => &mut next.lateral,
            ActionGroup::Lane => &mut next.lane,
        };
        *slot = timeline;
        Self::new(next.longitudinal, next.lateral, next.lane)
    }

    /// Per-group bins, `None` for absent groups.
    pub fn grid(&self) -> [Option<[ActionLabel; HORIZON_BINS as usize]>; 3] {
        ActionGroup::ALL.map(|g| self.timeline(g).map(GroupTimeline::bins))
    }
}

impl fmt::Display for MetaActionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_plan(self))
    }
}

impl std::str::FromStr for MetaActionPlan {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_plan(s)
    }
}

impl Serialize for MetaActionPlan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render_plan(self))
    }
}

impl<'de> Deserialize<'de> for MetaActionPlan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_plan(&text).map_err(serde::de::Error::custom)
    }
}

/// Formats a decisecond count as one-decimal seconds.
pub fn format_seconds(bins: u8) -> String {
    format!("{}.{}", bins / 10, bins % 10)
}

fn parse_time(raw: &str, line: usize) -> Result<u8, PlanError> {
    let trimmed = raw.trim();
    let number = trimmed.strip_suffix('s').unwrap_or(trimmed).trim();
    let value: f64 = number.parse().map_err(|_| PlanError::Malformed {
        line,
        detail: format!("bad time `{trimmed}`"),
    })?;
    if !value.is_finite() {
        return Err(PlanError::Malformed {
            line,
            detail: format!("bad time `{trimmed}`"),
        });
    }
    let scaled = value / BIN_SECONDS;
    let snapped = scaled.round();
    // ±0.01 s tolerance, with a hair of slack for the decimal-to-binary round trip.
    if (scaled - snapped).abs() > GRID_TOLERANCE_BINS + 1e-9 {
        return Err(PlanError::GridViolation {
            value: number.to_string(),
        });
    }
    if snapped < 0.0 || snapped > f64::from(HORIZON_BINS) {
        return Err(PlanError::PartitionViolation {
            group: ActionGroup::Longitudinal,
            detail: format!("time {number}s outside the 0.0s-6.4s horizon"),
        });
    }
    Ok(snapped as u8)
}

struct PendingGroup {
    group: ActionGroup,
    line: usize,
    segments: Vec<TimeSegment>,
}

impl PendingGroup {
    fn finish(self) -> Result<GroupTimeline, PlanError> {
        if self.segments.is_empty() {
            return Err(PlanError::PartitionViolation {
                group: self.group,
                detail: format!("group on line {} lists no intervals", self.line),
            });
        }
        GroupTimeline::new(self.group, self.segments)
    }
}

/// Parses the bullet-point plan text that follows a `Meta Actions:` header.
///
/// Group lines are `- <group>`; interval lines are indented deeper and read
/// `- <start>s-<end>s: <Label>`. Blank lines are ignored.
pub fn parse_plan(text: &str) -> Result<MetaActionPlan, PlanError> {
    let mut finished: Vec<GroupTimeline> = Vec::new();
    let mut current: Option<PendingGroup> = None;
    let mut group_indent = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let indent = raw_line.len() - raw_line.trim_start().len();
        let body = raw_line.trim();
        let item = body
            .strip_prefix('-')
            .ok_or_else(|| PlanError::Malformed {
                line: line_no,
                detail: format!("expected a bullet, found `{body}`"),
            })?
            .trim();

        let is_group_line = match group_indent {
            None => true,
            Some(gi) => indent <= gi,
        };

        if is_group_line {
            group_indent = Some(indent);
            let group = ActionGroup::from_name(item)
                .ok_or_else(|| PlanError::UnknownGroup(item.to_string()))?;
            if let Some(pending) = current.take() {
                finished.push(pending.finish()?);
            }
            if finished.iter().any(|t| t.group() == group) {
                return Err(PlanError::Malformed {
                    line: line_no,
                    detail: format!("duplicate {group} group"),
                });
            }
            current = Some(PendingGroup {
                group,
                line: line_no,
                segments: Vec::new(),
            });
            continue;
        }

        let pending = current.as_mut().ok_or_else(|| PlanError::Malformed {
            line: line_no,
            detail: "interval before any group".into(),
        })?;
        let (times, label_text) = item.split_once(':').ok_or_else(|| PlanError::Malformed {
            line: line_no,
            detail: format!("expected `<start>s-<end>s: <Label>`, found `{item}`"),
        })?;
        let label_text = label_text.trim();
        let label = ActionLabel::parse_in(pending.group, label_text).ok_or_else(|| {
            PlanError::UnknownLabel {
                group: pending.group,
                label: label_text.to_string(),
            }
        })?;
        let (start_raw, end_raw) = split_interval(times).ok_or_else(|| PlanError::Malformed {
            line: line_no,
            detail: format!("bad interval `{}`", times.trim()),
        })?;
        let group = pending.group;
        let with_group = |e: PlanError| match e {
            PlanError::PartitionViolation { detail, .. } => {
                PlanError::PartitionViolation { group, detail }
            }
            other => other,
        };
        let start = parse_time(start_raw, line_no).map_err(with_group)?;
        let end = parse_time(end_raw, line_no).map_err(with_group)?;
        pending.segments.push(TimeSegment::new(start, end, label));
    }

    if let Some(pending) = current.take() {
        finished.push(pending.finish()?);
    }
    if finished.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    MetaActionPlan::from_timelines(finished)
}

fn split_interval(times: &str) -> Option<(&str, &str)> {
    let times = times.trim();
    // The separator is the first '-' after at least one character, so a
    // leading sign on the start value is not mistaken for it.
    let pos = times.char_indices().skip(1).find(|&(_, c)| c == '-')?.0;
    Some((&times[..pos], &times[pos + 1..]))
}

/// Renders groups in longitudinal, lateral, lane order with one-decimal times.
pub fn render_plan(plan: &MetaActionPlan) -> String {
    let mut lines = Vec::new();
    for tl in plan.timelines() {
        lines.push(format!("- {}", tl.group().name()));
        for seg in tl.segments() {
            lines.push(format!(
                "  - {}s-{}s: {}",
                format_seconds(seg.start),
                format_seconds(seg.end),
                seg.label.text()
            ));
        }
    }
    lines.join("\n")
}

/// Micro-averaged Jaccard agreement over the 64×3 bin grid.
///
/// A bin is in the union when at least one plan defines its group, and in the
/// intersection when both define it with the same label.
pub fn plan_iou(pred: &MetaActionPlan, gt: &MetaActionPlan) -> f64 {
    let (inter, union) = iou_counts(pred, gt);
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Intersection and union bin counts behind [`plan_iou`].
pub fn iou_counts(pred: &MetaActionPlan, gt: &MetaActionPlan) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for group in ActionGroup::ALL {
        match (pred.timeline(group), gt.timeline(group)) {
            (None, None) => {}
            (Some(_), None) | (None, Some(_)) => union += HORIZON_BINS as usize,
            (Some(p), Some(g)) => {
                union += HORIZON_BINS as usize;
                inter += p
                    .bins()
                    .iter()
                    .zip(g.bins().iter())
                    .filter(|(a, b)| a == b)
                    .count();
            }
        }
    }
    (inter, union)
}

/// A maximal interval on which two plans disagree within one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanDiff {
    pub group: ActionGroup,
    pub start: u8,
    pub end: u8,
    /// `None` when the predicted plan omits the group.
    pub pred: Option<ActionLabel>,
    pub gt: Option<ActionLabel>,
}

impl fmt::Display for PlanDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |l: Option<ActionLabel>| l.map(ActionLabel::text).unwrap_or("absent");
        write!(
            f,
            "{} [{}s, {}s): {} vs {}",
            self.group,
            format_seconds(self.start),
            format_seconds(self.end),
            show(self.pred),
            show(self.gt)
        )
    }
}

/// Lists disagreement intervals ordered by group then time.
pub fn diff_plans(pred: &MetaActionPlan, gt: &MetaActionPlan) -> Vec<PlanDiff> {
    let mut out = Vec::new();
    for group in ActionGroup::ALL {
        let p = pred.timeline(group).map(GroupTimeline::bins);
        let g = gt.timeline(group).map(GroupTimeline::bins);
        if p.is_none() && g.is_none() {
            continue;
        }
        let at = |bins: &Option<[ActionLabel; HORIZON_BINS as usize]>, i: usize| {
            bins.as_ref().map(|b| b[i])
        };
        let mut open: Option<PlanDiff> = None;
        for i in 0..HORIZON_BINS as usize {
            let (pl, gl) = (at(&p, i), at(&g, i));
            let differs = pl != gl;
            match open.as_mut() {
                Some(d) if differs && d.pred == pl && d.gt == gl => d.end = i as u8 + 1,
                _ => {
                    if let Some(d) = open.take() {
                        out.push(d);
                    }
                    if differs {
                        open = Some(PlanDiff {
                            group,
                            start: i as u8,
                            end: i as u8 + 1,
                            pred: pl,
                            gt: gl,
                        });
                    }
                }
            }
        }
        if let Some(d) = open {
            out.push(d);
        }
    }
    out
}
