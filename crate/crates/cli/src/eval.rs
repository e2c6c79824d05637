use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use cfcurate_core::codec::{
    detokenize_traj, format_think, think_stats, AssistantResponse, ThinkStats,
};
use cfcurate_core::metaction::plan_iou;
use cfcurate_core::par;
use cfcurate_core::scenelab::Scene;
use cfcurate_core::trajgeo::{
    collision_check, offroad_check, set_corner_distance, set_metrics, MetricsRow, TrajectorySet,
    VehicleFootprint, COLLISION_WINDOW,
};

/// Policy output for one scene. `modes` takes precedence over decoding the
/// responses' trajectory tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<AssistantResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<TrajectorySet>,
}

impl Prediction {
    pub fn trajectories(&self) -> Result<TrajectorySet> {
        if let Some(m) = &self.modes {
            return Ok(m.clone());
        }
        if self.responses.is_empty() {
            bail!(
                "prediction for {} has neither modes nor responses",
                self.scene_id
            );
        }
        Ok(TrajectorySet::new(
            self.responses
                .iter()
                .map(|r| detokenize_traj(&r.traj_tokens))
                .collect(),
        )?)
    }
}

#[derive(Debug, Clone)]
struct SceneEval {
    odd_tag: String,
    min_ade: f64,
    avg_ade: f64,
    min_fde: f64,
    avg_fde: f64,
    corner: f64,
    modes: usize,
    collisions: usize,
    offroad: usize,
    iou_init: Vec<f64>,
    iou_edited: Vec<f64>,
    responses: Vec<AssistantResponse>,
}

fn eval_scene(scene: &Scene, pred: &Prediction) -> Result<SceneEval> {
    let fp = VehicleFootprint::default();
    let set = pred.trajectories()?;
    let s = set_metrics(&set, &scene.expert_future)?;
    let mut collisions = 0;
    let mut offroad = 0;
    for m in set.modes() {
        collisions += usize::from(collision_check(m, &fp, &scene.agents, COLLISION_WINDOW)?);
        offroad += usize::from(offroad_check(m, &fp, &scene.boundary));
    }
    let iou = |p: Option<&cfcurate_core::metaction::MetaActionPlan>| {
        p.map(|p| plan_iou(p, &scene.gt_plan))
    };
    Ok(SceneEval {
        odd_tag: scene.odd_tag.clone(),
        min_ade: s.min_ade,
        avg_ade: s.avg_ade,
        min_fde: s.min_fde,
        avg_fde: s.avg_fde,
        corner: set_corner_distance(&set, &scene.expert_future, &fp)?,
        modes: set.len(),
        collisions,
        offroad,
        iou_init: pred
            .responses
            .iter()
            .filter_map(|r| iou(r.initial_plan.as_ref()))
            .collect(),
        iou_edited: pred
            .responses
            .iter()
            .filter_map(|r| iou(r.final_plan()))
            .collect(),
        responses: pred.responses.clone(),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(rows: &[&SceneEval]) -> MetricsRow {
    let m = |f: fn(&SceneEval) -> f64| mean(rows.iter().map(|r| f(r))).unwrap_or(0.0);
    let modes: usize = rows.iter().map(|r| r.modes).sum();
    let rate = |f: fn(&SceneEval) -> usize| {
        if modes == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r)).sum::<usize>() as f64 / modes as f64
        }
    };
    MetricsRow {
        min_ade: m(|r| r.min_ade),
        avg_ade: m(|r| r.avg_ade),
        min_fde: m(|r| r.min_fde),
        avg_fde: m(|r| r.avg_fde),
        corner_distance: m(|r| r.corner),
        collision_rate: rate(|r| r.collisions),
        offroad_rate: rate(|r| r.offroad),
        iou_init: mean(rows.iter().flat_map(|r| r.iou_init.iter().copied())),
        iou_edited: mean(rows.iter().flat_map(|r| r.iou_edited.iter().copied())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: String,
    pub scenes: usize,
    pub mean_min_ade: Option<f64>,
    pub think_rate: Option<f64>,
    pub mean_output_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub overall: MetricsRow,
    pub by_odd_tag: BTreeMap<String, MetricsRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<ThinkStats>,
    pub bands: Vec<BandRow>,
}

fn band_label(lo: f64, hi: f64) -> String {
    if hi.is_infinite() {
        format!(">= {lo}")
    } else {
        format!("[{lo}, {hi})")
    }
}

pub fn evaluate(
    scenes: &[Scene],
    predictions: &[Prediction],
    band_edges: &[f64],
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Prediction> = predictions
        .iter()
        .map(|p| (p.scene_id.as_str(), p))
        .collect();
    if by_id.len() != predictions.len() {
        bail!("duplicate scene ids in predictions");
    }
    let scene_ids: HashMap<&str, ()> = scenes.iter().map(|s| (s.id.as_str(), ())).collect();
    if let Some(p) = predictions
        .iter()
        .find(|p| !scene_ids.contains_key(p.scene_id.as_str()))
    {
        bail!("id mismatch: prediction for unknown scene {}", p.scene_id);
    }
    if let Some(s) = scenes.iter().find(|s| !by_id.contains_key(s.id.as_str())) {
        bail!("id mismatch: no prediction for scene {}", s.id);
    }
    if scenes.is_empty() {
        bail!("no scenes to evaluate");
    }
    let evals: Vec<SceneEval> = par::map_ordered(scenes, |s| eval_scene(s, by_id[s.id.as_str()]))
        .into_iter()
        .collect::<Result<_>>()?;

    let all: Vec<&SceneEval> = evals.iter().collect();
    let mut groups: BTreeMap<String, Vec<&SceneEval>> = BTreeMap::new();
    for e in &evals {
        groups.entry(e.odd_tag.clone()).or_default().push(e);
    }
    let think = think_stats(evals.iter().flat_map(|e| e.responses.iter())).ok();

    let mut edges: Vec<f64> = band_edges
        .iter()
        .copied()
        .filter(|e| e.is_finite() && *e > 0.0)
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut lows = vec![0.0];
    lows.extend(edges.iter().copied());
    let mut highs = edges.clone();
    highs.push(f64::INFINITY);
    let bands = lows
        .iter()
        .zip(&highs)
        .map(|(&lo, &hi)| {
            let members: Vec<&SceneEval> = evals
                .iter()
                .filter(|e| e.min_ade >= lo && e.min_ade < hi)
                .collect();
            let stats = think_stats(members.iter().flat_map(|e| e.responses.iter())).ok();
            BandRow {
                band: band_label(lo, hi),
                scenes: members.len(),
                mean_min_ade: mean(members.iter().map(|e| e.min_ade)),
                think_rate: stats.map(|s| s.think_rate),
                mean_output_length: stats.map(|s| s.mean_output_length),
            }
        })
        .collect();

    Ok(EvalReport {
        scenes: evals.len(),
        overall: aggregate(&all),
        by_odd_tag: groups
            .iter()
            .map(|(k, v)| (k.clone(), aggregate(v)))
            .collect(),
        think,
        bands,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn row_line(name: &str, r: &MetricsRow) -> String {
    format!(
        "{name:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}\n",
        r.min_ade,
        r.avg_ade,
        r.min_fde,
        r.avg_fde,
        r.corner_distance,
        r.collision_rate,
        r.offroad_rate,
        opt(r.iou_init),
        opt(r.iou_edited)
    )
}

/// Plain-text tables for the terminal.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "split", "minADE", "avgADE", "minFDE", "avgFDE", "corner", "coll", "offroad", "IOU", "IOU'"
    ));
    out.push_str(&row_line("overall", &report.overall));
    for (tag, row) in &report.by_odd_tag {
        out.push_str(&row_line(tag, row));
    }
    if let Some(t) = &report.think {
        let _ = writeln!(
            out,
            "\nOutput Len. (Think Rate): {}",
            format_think(t.mean_output_length, t.think_rate)
        );
    }
    out.push_str("\nminADE band      scenes   minADE  think\n");
    for b in &report.bands {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>8} {:>6}",
            b.band,
            b.scenes,
            opt(b.mean_min_ade),
            b.think_rate.map_or("-".to_string(), |t| format!("{t:.3}"))
        );
    }
    out
}
