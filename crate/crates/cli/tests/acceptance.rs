//! Acceptance suite. Prints one line per criterion and exits nonzero when
//! any of them fails.
//!
//! Every check compares library output against an oracle written out here
//! independently of the library code.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use cfcurate_core::clients::{
    validate_reasoning, MockPolicy, ReasoningConstraints, StubTeacher, Verdict,
};
use cfcurate_core::codec::{detokenize_traj, tokenize_traj, LossPolicy, SpanRole, TrainingRecord};
use cfcurate_core::metaction::{
    iou_counts, parse_plan, plan_iou, render_plan, ActionGroup, ActionLabel, GroupTimeline,
    MetaActionPlan, PlanError, TimeSegment,
};
use cfcurate_core::pipeline::{
    assemble_cf_sample, filter_decision, meta_record, rollout_corpus, traj_record, FilterConfig,
    LabelConfig, RolloutConfig, RolloutResult,
};
use cfcurate_core::records::{read_jsonl, write_jsonl};
use cfcurate_core::scenelab::{
    label_scene, perturb_plan, synth_suite, LabelerConfig, Scene, ScriptSuite,
};
use cfcurate_core::trajgeo::{
    collision_check, corner_distance, offroad_check, set_metrics, steps_within, AgentTrack, Pose,
    RoadBoundary, Trajectory, TrajectorySet, VehicleFootprint, COLLISION_WINDOW,
};
use cfcurate_core::{par, seed};

const BINS: usize = 64;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [Check; 10] = [
        ("plan grammar", c1_grammar),
        ("IOU oracle", c2_iou),
        ("metric oracles", c3_metrics),
        ("filter predicate", c4_filter),
        ("end-to-end pipeline", c5_pipeline),
        ("labeler closure", c6_labeler),
        ("loss spans", c7_spans),
        ("reasoning validator", c8_validator),
        ("CLI determinism", c9_determinism),
        ("desk tokenizer", c10_tokenizer),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if out.pass { "pass" } else { "fail" };
        println!(
            "criterion {} ({name}): {verdict} [{:.2}s] {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            out.detail
        );
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria pass");
}

// ---------------------------------------------------------------- plans

fn random_timeline(rng: &mut impl Rng, group: ActionGroup) -> GroupTimeline {
    let vocab = group.vocabulary();
    let pieces = rng.random_range(1..=6usize);
    let mut cuts = BTreeSet::new();
    while cuts.len() < pieces - 1 {
        cuts.insert(rng.random_range(1..BINS as u8));
    }
    let mut edges = vec![0u8];
    edges.extend(cuts);
    edges.push(BINS as u8);
    let mut segments: Vec<TimeSegment> = Vec::new();
    for w in edges.windows(2) {
        let label = loop {
            let l = vocab[rng.random_range(0..vocab.len())];
            if segments.last().is_none_or(|s| s.label != l) {
                break l;
            }
        };
        segments.push(TimeSegment::new(w[0], w[1], label));
    }
    GroupTimeline::new(group, segments).expect("generated timeline is valid")
}

fn random_plan(rng: &mut impl Rng) -> MetaActionPlan {
    loop {
        let mut tls = Vec::new();
        for g in ActionGroup::ALL {
            if rng.random_bool(0.8) {
                tls.push(random_timeline(rng, g));
            }
        }
        if !tls.is_empty() {
            return MetaActionPlan::from_timelines(tls).expect("generated plan is valid");
        }
    }
}

/// Editable textual form of a plan: (group name, [(start, end, label)]).
type Lines = Vec<(String, Vec<(String, String, String)>)>;

fn secs(bins: u8) -> String {
    format!("{:.1}", f64::from(bins) / 10.0)
}

fn to_lines(plan: &MetaActionPlan) -> Lines {
    plan.timelines()
        .map(|tl| {
            let segs = tl
                .segments()
                .iter()
                .map(|s| (secs(s.start), secs(s.end), s.label.text().to_string()))
                .collect();
            (tl.group().name().to_string(), segs)
        })
        .collect()
}

fn lines_text(lines: &Lines) -> String {
    let mut out = Vec::new();
    for (g, segs) in lines {
        out.push(format!("- {g}"));
        for (s, e, l) in segs {
            out.push(format!("  - {s}s-{e}s: {l}"));
        }
    }
    out.join("\n")
}

#[derive(Debug, Clone, Copy)]
enum Corruption {
    Gap,
    Overlap,
    BadLabel,
    OffGrid,
}

fn corrupt(rng: &mut impl Rng, plan: &MetaActionPlan, kind: Corruption) -> String {
    let mut lines = to_lines(plan);
    let gi = rng.random_range(0..lines.len());
    let tl = plan.timelines().nth(gi).unwrap();
    let segs = tl.segments();
    let entries = &mut lines[gi].1;
    match kind {
        Corruption::Gap => {
            // Pull the end of a segment one bin earlier; the next one still
            // starts at the old boundary.
            let long: Vec<usize> = (0..segs.len()).filter(|&k| segs[k].len() >= 2).collect();
            let k = long[rng.random_range(0..long.len())];
            entries[k].1 = secs(segs[k].end - 1);
        }
        Corruption::Overlap => {
            let k = rng.random_range(0..segs.len());
            entries[k].1 = secs(segs[k].end + 1);
        }
        Corruption::BadLabel => {
            let k = rng.random_range(0..segs.len());
            let foreign: Vec<&str> = ActionGroup::ALL
                .iter()
                .filter(|&&g| g != tl.group())
                .flat_map(|g| g.vocabulary().iter().map(|l| l.text()))
                .chain(["Hover", "Drift Left", "keep speed!"])
                .collect();
            entries[k].2 = foreign[rng.random_range(0..foreign.len())].to_string();
        }
        Corruption::OffGrid => {
            let k = rng.random_range(0..segs.len());
            let bump = [0.03, 0.05, 0.07][rng.random_range(0..3)];
            if rng.random_bool(0.5) {
                entries[k].0 = format!("{:.2}", f64::from(segs[k].start) / 10.0 + bump);
            } else {
                entries[k].1 = format!("{:.2}", f64::from(segs[k].end) / 10.0 - bump);
            }
        }
    }
    lines_text(&lines)
}

fn expected_class(kind: Corruption, err: &PlanError) -> bool {
    matches!(
        (kind, err),
        (
            Corruption::Gap | Corruption::Overlap,
            PlanError::PartitionViolation { .. }
        ) | (Corruption::BadLabel, PlanError::UnknownLabel { .. })
            | (Corruption::OffGrid, PlanError::GridViolation { .. })
    )
}

fn c1_grammar() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let plan = random_plan(&mut rng);
        let text = render_plan(&plan);
        let ok = text == lines_text(&to_lines(&plan)) && parse_plan(&text).as_ref() == Ok(&plan);
        round_trip_failures += usize::from(!ok);
    }
    let kinds = [
        Corruption::Gap,
        Corruption::Overlap,
        Corruption::BadLabel,
        Corruption::OffGrid,
    ];
    let mut wrong = Vec::new();
    for i in 0..500 {
        let plan = random_plan(&mut rng);
        let kind = kinds[i % kinds.len()];
        let text = corrupt(&mut rng, &plan, kind);
        match parse_plan(&text) {
            Err(e) if expected_class(kind, &e) => {}
            other => wrong.push(format!("{kind:?} -> {other:?}")),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        round_trip_failures == 0 && wrong.is_empty() && elapsed < Duration::from_secs(5),
        format!(
            "{}/1000 round trips exact, {}/500 corruptions raised the expected error{}",
            1000 - round_trip_failures,
            500 - wrong.len(),
            wrong
                .first()
                .map(|w| format!("; first miss: {w}"))
                .unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- IOU

fn brute_iou(pred: &MetaActionPlan, gt: &MetaActionPlan) -> (usize, usize) {
    let (mut inter, mut union) = (0, 0);
    for g in ActionGroup::ALL {
        for b in 0..BINS as u8 {
            let label_of = |p: &MetaActionPlan| -> Option<ActionLabel> {
                let tl = p.timeline(g)?;
                tl.segments()
                    .iter()
                    .find(|s| s.start <= b && b < s.end)
                    .map(|s| s.label)
            };
            let (p, q) = (label_of(pred), label_of(gt));
            if p.is_some() || q.is_some() {
                union += 1;
            }
            if p.is_some() && p == q {
                inter += 1;
            }
        }
    }
    (inter, union)
}

fn worked_example() -> (MetaActionPlan, MetaActionPlan) {
    use ActionLabel::*;
    let lon = |cut| {
        GroupTimeline::new(
            ActionGroup::Longitudinal,
            vec![
                TimeSegment::new(0, cut, Accelerate),
                TimeSegment::new(cut, 64, KeepSpeed),
            ],
        )
        .unwrap()
    };
    let rest = [
        GroupTimeline::constant(Straight),
        GroupTimeline::constant(KeepLane),
    ];
    let pred = MetaActionPlan::from_timelines([lon(32), rest[0].clone(), rest[1].clone()]).unwrap();
    let gt = MetaActionPlan::from_timelines([lon(16), rest[0].clone(), rest[1].clone()]).unwrap();
    (pred, gt)
}

fn c2_iou() -> Outcome {
    let mut rng = seed::rng(202);
    let mut mismatches = 0;
    for i in 0..1000u64 {
        let a = random_plan(&mut rng);
        // Half the pairs share structure so the IOU spans the whole range.
        let b = if i % 2 == 0 {
            perturb_plan(
                &a,
                seed::derive_seed(202, "pair", i),
                rng.random_range(0.0..1.0),
            )
        } else {
            random_plan(&mut rng)
        };
        let (inter, union) = brute_iou(&a, &b);
        let exact =
            plan_iou(&a, &b) == inter as f64 / union as f64 && iou_counts(&a, &b) == (inter, union);
        mismatches += usize::from(!exact);
    }
    let (pred, gt) = worked_example();
    let example = plan_iou(&pred, &gt);
    let example_ok = iou_counts(&pred, &gt) == (176, 192) && example == 176.0 / 192.0;
    outcome(
        mismatches == 0 && example_ok,
        format!("{mismatches} mismatches on 1000 pairs; worked example = {example:.6} (176/192)"),
    )
}

// ---------------------------------------------------------------- geometry

fn random_traj(rng: &mut impl Rng) -> Trajectory {
    let (mut x, mut y, mut h) = (0.0f64, 0.0f64, rng.random_range(-0.3f64..0.3));
    let v = rng.random_range(0.0..12.0);
    let poses = (0..BINS)
        .map(|_| {
            h += rng.random_range(-0.05..0.05);
            x += v * 0.1 * h.cos() + rng.random_range(-0.2..0.2);
            y += v * 0.1 * h.sin() + rng.random_range(-0.2..0.2);
            Pose::planar(x, y, h)
        })
        .collect();
    Trajectory::new(poses).unwrap()
}

fn oracle_ade(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let (p, q) = (a.poses()[i], b.poses()[i]);
        sum += ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
    }
    sum / a.len() as f64
}

fn oracle_fde(a: &Trajectory, b: &Trajectory) -> f64 {
    let (p, q) = (a.last(), b.last());
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// Corners by explicit rotation matrix, in a fixed order.
fn oracle_corners(p: &Pose, length: f64, width: f64) -> Vec<[f64; 2]> {
    let r = [
        [p.heading.cos(), -p.heading.sin()],
        [p.heading.sin(), p.heading.cos()],
    ];
    [[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]]
        .iter()
        .map(|s| {
            let (u, v) = (s[0] * length / 2.0, s[1] * width / 2.0);
            [
                p.x + r[0][0] * u + r[0][1] * v,
                p.y + r[1][0] * u + r[1][1] * v,
            ]
        })
        .collect()
}

fn oracle_corner_distance(a: &Trajectory, b: &Trajectory, fp: &VehicleFootprint) -> f64 {
    let mut total = 0.0;
    for (p, q) in a.poses().iter().zip(b.poses()) {
        let (pc, qc) = (
            oracle_corners(p, fp.length, fp.width),
            oracle_corners(q, fp.length, fp.width),
        );
        for k in 0..4 {
            total += ((pc[k][0] - qc[k][0]).powi(2) + (pc[k][1] - qc[k][1]).powi(2)).sqrt();
        }
    }
    total / (4.0 * a.len() as f64)
}

/// Separating-axis overlap of two rectangles given by their corners.
fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    for poly in [a, b] {
        for k in 0..poly.len() {
            let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let project = |pts: &[[f64; 2]]| {
                pts.iter()
                    .map(|c| c[0] * axis[0] + c[1] * axis[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    })
            };
            let ((alo, ahi), (blo, bhi)) = (project(a), project(b));
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, PartialEq)]
enum Dense {
    Hit,
    Clear,
    Ambiguous,
}

/// Samples both tracks at 100 Hz, interpolating linearly between the 10 Hz
/// poses, and compares boxes shrunk and grown by the decision margin.
fn dense_oracle(
    ego: &Trajectory,
    ego_fp: &VehicleFootprint,
    agent: &AgentTrack,
    window: f64,
) -> Dense {
    const MARGIN: f64 = 0.05;
    let steps = steps_within(window, ego.len());
    let at = |t: &Trajectory, k: usize| -> Pose {
        let (i, f) = (k / 10, (k % 10) as f64 / 10.0);
        let a = t.poses()[i];
        if f == 0.0 {
            return a;
        }
        let b = t.poses()[i + 1];
        Pose::planar(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.heading)
    };
    let (mut shrunk_hit, mut grown_hit) = (false, false);
    for k in 0..=(steps - 1) * 10 {
        let (e, o) = (at(ego, k), at(&agent.trajectory, k));
        for (delta, flag) in [
            (-MARGIN / 2.0, &mut shrunk_hit),
            (MARGIN / 2.0, &mut grown_hit),
        ] {
            let ec = oracle_corners(&e, ego_fp.length + 2.0 * delta, ego_fp.width + 2.0 * delta);
            let oc = oracle_corners(
                &o,
                agent.footprint.length + 2.0 * delta,
                agent.footprint.width + 2.0 * delta,
            );
            *flag |= polygons_overlap(&ec, &oc);
        }
    }
    match (shrunk_hit, grown_hit) {
        (true, _) => Dense::Hit,
        (false, false) => Dense::Clear,
        _ => Dense::Ambiguous,
    }
}

fn straight_track(x0: f64, y0: f64, heading: f64, speed: f64) -> Trajectory {
    let poses = (1..=BINS)
        .map(|i| {
            let t = i as f64 * 0.1;
            Pose::planar(
                x0 + speed * t * heading.cos(),
                y0 + speed * t * heading.sin(),
                heading,
            )
        })
        .collect();
    Trajectory::new(poses).unwrap()
}

/// Point-in-polygon by crossing number.
fn inside_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut crossings = 0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        if (a[1] <= p[1] && b[1] > p[1]) || (b[1] <= p[1] && a[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if x > p[0] {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

fn c3_metrics() -> Outcome {
    let mut rng = seed::rng(303);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let reference = random_traj(&mut rng);
        let modes: Vec<Trajectory> = (0..rng.random_range(1..=6))
            .map(|_| random_traj(&mut rng))
            .collect();
        let ades: Vec<f64> = modes.iter().map(|m| oracle_ade(m, &reference)).collect();
        let fdes: Vec<f64> = modes.iter().map(|m| oracle_fde(m, &reference)).collect();
        let n = modes.len() as f64;
        let expect = [
            ades.iter().copied().fold(f64::INFINITY, f64::min),
            ades.iter().sum::<f64>() / n,
            fdes.iter().copied().fold(f64::INFINITY, f64::min),
            fdes.iter().sum::<f64>() / n,
        ];
        let s = set_metrics(&TrajectorySet::new(modes).unwrap(), &reference).unwrap();
        for (got, want) in [s.min_ade, s.avg_ade, s.min_fde, s.avg_fde]
            .iter()
            .zip(expect)
        {
            worst = worst.max((got - want).abs());
        }
    }
    pass &= worst <= 1e-9;
    notes.push(format!("displacement max err {worst:.1e}"));

    let fp = VehicleFootprint::new(4.6, 1.8).unwrap();
    let mut corner_worst = 0.0f64;
    for _ in 0..1000 {
        let (a, b) = (random_traj(&mut rng), random_traj(&mut rng));
        let got = corner_distance(&a, &b, &fp).unwrap();
        corner_worst = corner_worst.max((got - oracle_corner_distance(&a, &b, &fp)).abs());
    }
    let rotated = |h| Trajectory::new(vec![Pose::planar(3.0, -1.0, h); BINS]).unwrap();
    let tenth = corner_distance(&rotated(0.1), &rotated(0.0), &fp).unwrap();
    let expected_tenth = 2.0 * 0.05f64.sin() * 2.3f64.hypot(0.9);
    pass &= corner_worst <= 1e-9
        && (tenth - expected_tenth).abs() <= 1e-9
        && (tenth - 0.24688).abs() < 5e-6;
    notes.push(format!(
        "corner max err {corner_worst:.1e}, 0.1 rad case {tenth:.5} m"
    ));

    let (mut agree, mut hits, mut ambiguous, mut disagree) = (0, 0, 0, 0);
    for _ in 0..500 {
        let ego_speed = rng.random_range(0.0..12.0);
        let ego_heading = rng.random_range(-0.5..0.5);
        let ego = straight_track(0.0, 0.0, ego_heading, ego_speed);
        let agent_fp =
            VehicleFootprint::new(rng.random_range(3.5..5.5), rng.random_range(1.5..2.2)).unwrap();
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let speed = rng.random_range(0.0..10.0);
        // Aim the agent at where the ego will be, give or take a few meters.
        let meet = rng.random_range(0.0..5.5);
        let target = [
            ego_speed * meet * ego_heading.cos() + rng.random_range(-7.0..7.0),
            ego_speed * meet * ego_heading.sin() + rng.random_range(-7.0..7.0),
        ];
        let agent = AgentTrack {
            id: "a".into(),
            footprint: agent_fp,
            trajectory: straight_track(
                target[0] - speed * meet * heading.cos(),
                target[1] - speed * meet * heading.sin(),
                heading,
                speed,
            ),
        };
        let got =
            collision_check(&ego, &fp, std::slice::from_ref(&agent), COLLISION_WINDOW).unwrap();
        match dense_oracle(&ego, &fp, &agent, COLLISION_WINDOW) {
            Dense::Ambiguous => ambiguous += 1,
            Dense::Hit if got => {
                agree += 1;
                hits += 1
            }
            Dense::Clear if !got => agree += 1,
            _ => disagree += 1,
        }
    }
    pass &= disagree == 0;
    notes.push(format!(
        "collision {agree}/{} decided cases agree ({hits} hits, {ambiguous} within margin)",
        agree + disagree
    ));

    let (mut off_agree, mut off_count) = (0, 0);
    for _ in 0..500 {
        let n = rng.random_range(5..=12);
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let poly: Vec<[f64; 2]> = angles
            .iter()
            .map(|a| {
                let r = rng.random_range(8.0..30.0);
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let Ok(boundary) = RoadBoundary::new(poly.clone()) else {
            continue;
        };
        let mut traj = random_traj(&mut rng);
        traj = traj.transformed(
            0.0,
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let want = traj.poses().iter().any(|p| {
            oracle_corners(p, fp.length, fp.width)
                .iter()
                .any(|&c| !inside_polygon(c, &poly))
        });
        off_agree += usize::from(offroad_check(&traj, &fp, &boundary) == want);
        off_count += 1;
    }
    pass &= off_agree == off_count && off_count >= 450;
    notes.push(format!("offroad {off_agree}/{off_count} agree"));

    outcome(pass, notes.join("; "))
}

// ---------------------------------------------------------------- filter

fn template_result() -> RolloutResult {
    let scene = synth_suite(ScriptSuite::Straight, 1, 0).unwrap().remove(0);
    let set = TrajectorySet::new(vec![scene.expert_future.clone()]).unwrap();
    RolloutResult {
        scene_id: scene.id,
        free_set: set.clone(),
        prefilled_set: set,
        free_plan: scene.gt_plan,
        minade_free: 0.0,
        minade_pf: 0.0,
        free_iou: 1.0,
    }
}

fn c4_filter() -> Outcome {
    let mut rng = seed::rng(404);
    let epsilons = [0.0, 0.25, 0.5, 1.0];
    let rows: Vec<(f64, f64)> = (0..10_000)
        .map(|i| {
            let free = match i % 5 {
                0 => epsilons[rng.random_range(0..4)],
                _ => rng.random_range(0.0..2.0),
            };
            let pf = match i % 7 {
                0 => free,
                _ => rng.random_range(0.0..2.0),
            };
            (free, pf)
        })
        .collect();
    let mut r = template_result();
    let mut selected: Vec<BTreeSet<usize>> = Vec::new();
    let mut mismatches = 0;
    for &eps in &epsilons {
        let cfg = FilterConfig { epsilon: eps };
        let mut set = BTreeSet::new();
        for (i, &(free, pf)) in rows.iter().enumerate() {
            r.minade_free = free;
            r.minade_pf = pf;
            let got = filter_decision(&r, &cfg);
            let want = pf < free && free > eps;
            mismatches += usize::from(got != want);
            if got {
                set.insert(i);
            }
        }
        selected.push(set);
    }
    let monotone = selected.windows(2).all(|w| w[1].is_subset(&w[0]));
    let counts: Vec<String> = selected.iter().map(|s| s.len().to_string()).collect();
    outcome(
        mismatches == 0 && monotone,
        format!(
            "{mismatches} mismatches over 4 x 10000 rows; selected at eps 0/0.25/0.5/1 = {}; nested: {monotone}",
            counts.join("/")
        ),
    )
}

// ---------------------------------------------------------------- pipeline

fn rollouts(scenes: &[Scene], strength: f64) -> Vec<RolloutResult> {
    let policy = MockPolicy::new(scenes, strength);
    let cfg = RolloutConfig {
        seed: 7,
        ..RolloutConfig::default()
    };
    let (ok, failed) = rollout_corpus(&policy, scenes, &cfg);
    assert!(failed.is_empty(), "rollout failures: {failed:?}");
    ok
}

fn oracle_min_ade(set: &TrajectorySet, expert: &Trajectory) -> f64 {
    set.modes()
        .iter()
        .map(|m| oracle_ade(m, expert))
        .fold(f64::INFINITY, f64::min)
}

fn c5_pipeline() -> Outcome {
    let start = Instant::now();
    par::with_threads(1, || {
        let scenes = synth_suite(ScriptSuite::Mixed, 200, 7).unwrap();
        let cfg = FilterConfig::default();

        let calm = rollouts(&scenes, 0.0);
        let calm_selected = calm.iter().filter(|r| filter_decision(r, &cfg)).count();

        let live = rollouts(&scenes, 0.3);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &live).unwrap();
        let stored: Vec<RolloutResult> = read_jsonl(buf.as_slice()).unwrap();

        let mut brute = BTreeSet::new();
        let mut pf_not_worse = 0;
        for (r, scene) in stored.iter().zip(&scenes) {
            assert_eq!(r.scene_id, scene.id);
            let free = oracle_min_ade(&r.free_set, &scene.expert_future);
            let pf = oracle_min_ade(&r.prefilled_set, &scene.expert_future);
            if pf < free && free > 0.5 {
                brute.insert(r.scene_id.clone());
            }
            pf_not_worse += usize::from(pf <= free);
        }
        let library: BTreeSet<String> = stored
            .iter()
            .filter(|r| filter_decision(r, &cfg))
            .map(|r| r.scene_id.clone())
            .collect();
        let share = pf_not_worse as f64 / scenes.len() as f64;
        let elapsed = start.elapsed();
        outcome(
            calm_selected == 0 && library == brute && share >= 0.95 && elapsed < Duration::from_secs(120),
            format!(
                "strength 0 selects {calm_selected}; strength 0.3 selects {} (brute force {}, equal: {}); pf <= free on {:.1}%",
                library.len(),
                brute.len(),
                library == brute,
                100.0 * share
            ),
        )
    })
}

// ---------------------------------------------------------------- labeler

/// Every group present in both plans with the same label sequence and
/// boundaries no more than one bin apart.
fn transitions_within_one_bin(a: &MetaActionPlan, b: &MetaActionPlan) -> bool {
    ActionGroup::ALL
        .iter()
        .all(|&g| match (a.timeline(g), b.timeline(g)) {
            (None, None) => true,
            (Some(x), Some(y)) => {
                let (xs, ys) = (x.segments(), y.segments());
                xs.len() == ys.len()
                    && xs
                        .iter()
                        .zip(ys)
                        .all(|(p, q)| p.label == q.label && p.end.abs_diff(q.end) <= 1)
            }
            _ => false,
        })
}

fn c6_labeler() -> Outcome {
    let cfg = LabelerConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for suite in ScriptSuite::NAMED {
        let scenes = synth_suite(suite, 200, 7).unwrap();
        let (mut sum, mut min, mut off) = (0.0, 1.0f64, 0);
        for s in &scenes {
            let plan = label_scene(&s.expert_future, &s.history, s.route.as_ref(), &cfg);
            let iou = plan_iou(&plan, &s.gt_plan);
            sum += iou;
            min = min.min(iou);
            off += usize::from(!transitions_within_one_bin(&plan, &s.gt_plan));
        }
        let mean = sum / scenes.len() as f64;
        pass &= min >= 0.95 && mean >= 0.98 && off == 0;
        notes.push(format!("{suite} min {min:.3} mean {mean:.3} off {off}"));
    }
    outcome(pass, notes.join(", "))
}

// ---------------------------------------------------------------- records

fn span_shape(record: &TrainingRecord) -> (Vec<(SpanRole, f64, bool)>, bool) {
    let text = record.full_text();
    let mut covered = 0;
    let mut contiguous = true;
    for s in &record.loss_spans {
        contiguous &= s.start == covered && s.end >= s.start && text.is_char_boundary(s.end);
        covered = s.end;
    }
    let shape = record
        .loss_spans
        .iter()
        .map(|s| (s.role, s.weight, s.masked))
        .collect();
    (shape, contiguous && covered == text.len())
}

fn c7_spans() -> Outcome {
    let scene = synth_suite(ScriptSuite::LaneChange, 1, 3)
        .unwrap()
        .remove(0);
    let loss = LossPolicy::default();
    let mut result = template_result();
    result.scene_id = scene.id.clone();
    result.minade_free = 1.2;
    result.minade_pf = 0.3;
    result.free_plan = perturb_plan(&scene.gt_plan, 5, 1.0);
    let cfg = LabelConfig::default();
    let reasoning = StubTeacher::reason(&result.free_plan, &scene.gt_plan);
    let cf = assemble_cf_sample(&scene, &result, &reasoning, &cfg).unwrap();
    let meta = meta_record(&scene, &loss, false).unwrap();
    let traj = traj_record(&scene, &loss, false).unwrap();

    use SpanRole::*;
    let expected = [
        (
            "cf",
            &cf,
            vec![
                (Prompt, 0.0, true),
                (InitialMeta, 0.0, true),
                (Thinking, 10.0, false),
                (CorrectedMeta, 10.0, false),
                (Traj, 1.0, false),
            ],
        ),
        (
            "meta",
            &meta,
            vec![
                (Prompt, 0.0, true),
                (InitialMeta, 10.0, false),
                (Traj, 1.0, false),
            ],
        ),
        (
            "traj_only",
            &traj,
            vec![(Prompt, 0.0, true), (Traj, 1.0, false)],
        ),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, record, want) in expected {
        let (shape, covered) = span_shape(record);
        let ok = shape == want && covered;
        pass &= ok;
        notes.push(format!("{name} {}", if ok { "exact" } else { "MISMATCH" }));
    }
    outcome(pass, notes.join(", "))
}

// ---------------------------------------------------------------- validator

fn c8_validator() -> Outcome {
    let constraints = ReasoningConstraints::default();
    let clean = "The plan keeps speed through the crossing while a pedestrian waits on the curb. \
                 Slowing down leaves room to stop if they step out, so decelerate from two seconds \
                 and hold a low speed until the crosswalk is clear ahead.";
    let with_expert = "Slowing down matches the expert plan better than keeping speed here.";
    let long = vec!["word"; 120].join(" ");
    let words = clean.split_whitespace().count();
    let cases_ok = words == 40
        && validate_reasoning(clean, &constraints).is_accept()
        && !validate_reasoning(with_expert, &constraints).is_accept()
        && !validate_reasoning(&long, &constraints).is_accept();

    let mut rng = seed::rng(808);
    let (mut tried, mut accepted) = (0, 0);
    let mut first_reject = None;
    while tried < 1000 {
        let a = random_plan(&mut rng);
        let b = if rng.random_bool(0.5) {
            perturb_plan(&a, rng.random(), rng.random_range(0.1..1.0))
        } else {
            random_plan(&mut rng)
        };
        if a == b {
            continue;
        }
        tried += 1;
        let text = StubTeacher::reason(&a, &b);
        match validate_reasoning(&text, &constraints) {
            Verdict::Accept => accepted += 1,
            Verdict::Reject(r) => {
                first_reject.get_or_insert(format!("{r}: {text}"));
            }
        }
    }
    outcome(
        cases_ok && accepted == tried,
        format!(
            "rule cases {} ({words}-word clean text); stub reasoning accepted on {accepted}/{tried} diffs{}",
            if cases_ok { "ok" } else { "FAILED" },
            first_reject.map(|r| format!("; first reject: {r}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- CLI

fn run_cli(threads: usize, dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_cfcurate"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cfcurate");
    assert!(
        out.status.success(),
        "cfcurate {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Runs every subcommand in `dir` and returns (artifact name, bytes) pairs,
/// stdout included.
fn cli_pipeline(threads: usize, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let steps: &[(&str, &[&str])] = &[
        (
            "synth",
            &[
                "synth",
                "--suite",
                "mixed",
                "-n",
                "40",
                "--seed",
                "7",
                "-o",
                "scenes.jsonl",
            ],
        ),
        (
            "label",
            &["label", "--scenes", "scenes.jsonl", "-o", "labeled.jsonl"],
        ),
        (
            "rollout",
            &[
                "rollout",
                "--scenes",
                "scenes.jsonl",
                "--seed",
                "7",
                "-o",
                "results.jsonl",
            ],
        ),
        (
            "filter",
            &[
                "filter",
                "--results",
                "results.jsonl",
                "--selected",
                "selected.txt",
                "--scatter",
                "scatter.csv",
            ],
        ),
        (
            "label-cf",
            &[
                "label-cf",
                "--scenes",
                "scenes.jsonl",
                "--results",
                "results.jsonl",
                "-o",
                "cf.jsonl",
            ],
        ),
        (
            "records traj",
            &[
                "records",
                "--scenes",
                "scenes.jsonl",
                "--kind",
                "traj",
                "-o",
                "traj.jsonl",
            ],
        ),
        (
            "records meta",
            &[
                "records",
                "--scenes",
                "scenes.jsonl",
                "--kind",
                "meta",
                "-o",
                "meta.jsonl",
            ],
        ),
        (
            "round-plan",
            &[
                "round-plan",
                "--round",
                "1",
                "--seed",
                "3",
                "-o",
                "plan.json",
            ],
        ),
        (
            "mix",
            &[
                "mix",
                "--source",
                "traj=traj.jsonl",
                "--source",
                "meta=meta.jsonl",
                "--source",
                "cf_round_1=cf.jsonl",
                "--spec",
                "plan.json",
                "-o",
                "mix.jsonl",
            ],
        ),
        (
            "mix windowed",
            &[
                "mix",
                "--source",
                "traj=traj.jsonl",
                "--source",
                "meta=meta.jsonl",
                "--weight",
                "meta=3",
                "--seed",
                "5",
                "--window",
                "16",
                "-o",
                "mix_windowed.jsonl",
            ],
        ),
        (
            "predict",
            &[
                "predict",
                "--scenes",
                "scenes.jsonl",
                "--seed",
                "7",
                "-o",
                "preds.jsonl",
            ],
        ),
        (
            "eval",
            &[
                "eval",
                "--predictions",
                "preds.jsonl",
                "--scenes",
                "scenes.jsonl",
                "-o",
                "report.json",
            ],
        ),
    ];
    let mut artifacts = Vec::new();
    for (name, args) in steps {
        let stdout = run_cli(threads, dir, args);
        artifacts.push((format!("{name} stdout"), stdout));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files {
        artifacts.push((
            f.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&f).unwrap(),
        ));
    }
    artifacts
}

fn c9_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in [1usize, 8] {
        for rep in 0..2 {
            let dir = root.path().join(format!("t{threads}_r{rep}"));
            std::fs::create_dir(&dir).unwrap();
            runs.push((threads, rep, cli_pipeline(threads, &dir)));
        }
    }
    let reference = &runs[0].2;
    let mut differences = Vec::new();
    for (threads, rep, artifacts) in &runs[1..] {
        if artifacts.len() != reference.len() {
            differences.push(format!(
                "threads {threads} rep {rep}: artifact count differs"
            ));
            continue;
        }
        for ((name, bytes), (_, want)) in artifacts.iter().zip(reference) {
            if bytes != want {
                differences.push(format!("threads {threads} rep {rep}: {name}"));
            }
        }
    }
    let selected = reference
        .iter()
        .find(|(n, _)| n == "selected.txt")
        .map_or(0, |(_, b)| b.iter().filter(|&&c| c == b'\n').count());
    outcome(
        differences.is_empty() && selected > 0,
        format!(
            "{} artifacts from 12 command runs byte-identical across 2 runs x threads 1/8 ({selected} scenes selected){}",
            reference.len(),
            differences.first().map(|d| format!("; first difference: {d}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- tokenizer

fn c10_tokenizer() -> Outcome {
    let mut suites: Vec<ScriptSuite> = ScriptSuite::NAMED.to_vec();
    suites.push(ScriptSuite::Mixed);
    let scenes: Vec<Scene> = suites
        .iter()
        .flat_map(|&s| [7u64, 11].map(|seed| synth_suite(s, 200, seed).unwrap()))
        .flatten()
        .collect();
    let encode = |threads| {
        par::with_threads(threads, || {
            par::map_ordered(&scenes, |s| {
                tokenize_traj(&s.expert_future).map_err(|e| format!("{}: {e}", s.id))
            })
        })
    };
    let first = encode(1);
    let again = encode(8);
    let deterministic_tokens = first == again;
    let mut worst = (0.0f64, String::new());
    let mut errors = Vec::new();
    let mut deterministic_decode = true;
    for (s, tokens) in scenes.iter().zip(&first) {
        match tokens {
            Ok(t) => {
                let decoded = detokenize_traj(t);
                deterministic_decode &= decoded == detokenize_traj(t);
                let ade = oracle_ade(&decoded, &s.expert_future);
                if ade > worst.0 {
                    worst = (ade, s.id.clone());
                }
            }
            Err(e) => errors.push(e.clone()),
        }
    }
    outcome(
        errors.is_empty() && worst.0 < 0.5 && deterministic_tokens && deterministic_decode,
        format!(
            "{} trajectories, {} out of token range, max round-trip ADE {:.3} m ({}); deterministic: {}",
            scenes.len(),
            errors.len(),
            worst.0,
            worst.1,
            deterministic_tokens && deterministic_decode
        ),
    )
}
