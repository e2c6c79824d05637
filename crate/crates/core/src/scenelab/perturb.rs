//! Seeded plan edits standing in for a policy's imperfect meta-actions.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::BINS;
use crate::metaction::{ActionGroup, ActionLabel, GroupTimeline, MetaActionPlan};
use crate::seed;

/// Edit attempts per group before giving up on reaching the target.
const MAX_EDITS: usize = 512;

fn runs(bins: &[ActionLabel]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=bins.len() {
        if i == bins.len() || bins[i] != bins[start] {
            out.push((start, i));
            start = i;
        }
    }
    out
}

fn other_label(rng: &mut ChaCha8Rng, group: ActionGroup, not: ActionLabel) -> ActionLabel {
    let choices: Vec<ActionLabel> = group
        .vocabulary()
        .iter()
        .copied()
        .filter(|&l| l != not)
        .collect();
    *choices
        .choose(rng)
        .expect("every vocabulary has at least two labels")
}

fn edit(rng: &mut ChaCha8Rng, group: ActionGroup, bins: &mut [ActionLabel]) {
    let segs = runs(bins);
    match rng.random_range(0..4u8) {
        // substitute a whole segment
        0 => {
            let (a, b) = segs[rng.random_range(0..segs.len())];
            let label = other_label(rng, group, bins[a]);
            bins[a..b].fill(label);
        }
        // shift a boundary
        1 if segs.len() > 1 => {
            let k = rng.random_range(1..segs.len());
            let at = segs[k].0 as i64;
            let shift = rng.random_range(1..=8i64) * if rng.random_bool(0.5) { 1 } else { -1 };
            let to = (at + shift).clamp(0, BINS as i64) as usize;
            let at = at as usize;
            if to > at {
                let label = bins[at - 1];
                bins[at..to].fill(label);
            } else {
                let label = bins[at];
                bins[to..at].fill(label);
            }
        }
        // delete a segment into a neighbor
        2 if segs.len() > 1 => {
            let k = rng.random_range(0..segs.len());
            let (a, b) = segs[k];
            let label = if k == 0 { bins[b] } else { bins[a - 1] };
            bins[a..b].fill(label);
        }
        // relabel a random window
        _ => {
            let len = rng.random_range(1..=16usize);
            let a = rng.random_range(0..=BINS - len);
            let label = other_label(rng, group, bins[a]);
            bins[a..a + len].fill(label);
        }
    }
}

fn changed(a: &[ActionLabel], b: &[ActionLabel]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Edits that would overshoot the target by more than the slack are
/// rejected, so the changed fraction tracks the strength.
fn perturb_group(rng: &mut ChaCha8Rng, timeline: &GroupTimeline, target: usize) -> GroupTimeline {
    let group = timeline.group();
    let original = timeline.bins();
    let limit = target + (target / 8).max(1);
    let mut bins = original;
    for _ in 0..MAX_EDITS {
        if changed(&bins, &original) >= target {
            break;
        }
        let mut candidate = bins;
        edit(rng, group, &mut candidate);
        if changed(&candidate, &original) <= limit {
            bins = candidate;
        }
    }
    GroupTimeline::from_bins(group, &bins).expect("edits keep labels inside the group vocabulary")
}

/// Perturbs each present group until about `strength · 64` of its bins
/// differ from the input. Strength 0 returns the plan unchanged.
pub fn perturb_plan(plan: &MetaActionPlan, seed: u64, strength: f64) -> MetaActionPlan {
    let strength = if strength.is_finite() {
        strength.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let target = (strength * BINS as f64).round() as usize;
    if target == 0 {
        return plan.clone();
    }
    let mut rng = seed::rng(seed);
    let timelines: Vec<GroupTimeline> = plan
        .timelines()
        .map(|tl| perturb_group(&mut rng, tl, target))
        .collect();
    MetaActionPlan::from_timelines(timelines).expect("same groups as the input plan")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaction::plan_iou;

    #[test]
    fn strength_zero_is_identity() {
        let plan = MetaActionPlan::cruise();
        assert_eq!(perturb_plan(&plan, 42, 0.0), plan);
    }

    #[test]
    fn deterministic() {
        let plan = MetaActionPlan::cruise();
        assert_eq!(perturb_plan(&plan, 9, 0.4), perturb_plan(&plan, 9, 0.4));
    }

    #[test]
    fn full_strength_single_group_destroys_overlap() {
        let plan =
            MetaActionPlan::from_timelines([GroupTimeline::constant(ActionLabel::KeepSpeed)])
                .unwrap();
        let mean: f64 = (0..100)
            .map(|s| plan_iou(&perturb_plan(&plan, s, 1.0), &plan))
            .sum::<f64>()
            / 100.0;
        assert!(mean < 0.5, "mean iou {mean}");
    }

    #[test]
    fn changed_fraction_tracks_strength() {
        let plan = MetaActionPlan::cruise();
        for strength in [0.1, 0.3, 0.6] {
            let mut total = 0.0;
            for s in 0..200 {
                let out = perturb_plan(&plan, s, strength);
                let a = out.grid();
                let b = plan.grid();
                let changed = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| {
                        let (x, y) = (x.unwrap(), y.unwrap());
                        x.iter().zip(&y).filter(|(p, q)| p != q).count()
                    })
                    .sum::<usize>();
                total += changed as f64 / 192.0;
            }
            let mean = total / 200.0;
            assert!(
                (mean - strength).abs() < 0.12,
                "strength {strength}: {mean}"
            );
        }
    }
}
