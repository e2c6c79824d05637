//! Rollout, disagreement filter, counterfactual labeling, dataset mixing and
//! multi-round planning.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    validate_reasoning, ClientError, PolicyClient, PolicyMode, PolicyRequest, ReasoningConstraints,
    Rejection, ScenePayload, TeacherClient, TeacherRequest, Verdict,
};
use crate::codec::{
    detokenize_traj, parse_response, render_prompt, tokenize_traj_clamped, AssistantResponse,
    CodecError, LossPolicy, Provenance, Task, TrainingRecord,
};
use crate::metaction::{plan_iou, render_plan, MetaActionPlan};
use crate::par;
use crate::records::{round_sig, SIGNIFICANT_DIGITS};
use crate::scenelab::Scene;
use crate::seed::{derive_seed, rng};
use crate::trajgeo::{min_ade, GeoError, Pose, Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("scene {scene}: policy: {source}")]
    Policy { scene: String, source: ClientError },
    #[error("scene {scene}: teacher: {source}")]
    Teacher { scene: String, source: ClientError },
    #[error("scene {scene}: response: {source}")]
    Response { scene: String, source: CodecError },
    #[error("scene {scene}: {source}")]
    Geo { scene: String, source: GeoError },
    #[error("scene {0} does not pass the filter")]
    NotFiltered(String),
    #[error("scene {scene}: reasoning rejected ({rejection})")]
    InvalidReasoning { scene: String, rejection: Rejection },
    #[error("scene {0} has no rollout result or scene record")]
    IdMismatch(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("counterfactual dataset for round {0} is missing")]
    MissingRound(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    #[serde(alias = "k")]
    pub samples_per_mode: usize,
    pub temperature: f64,
    pub seed: u64,
    pub include_route: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            samples_per_mode: 6,
            temperature: 0.8,
            seed: 0,
            include_route: false,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.samples_per_mode == 0 {
            return Err(PipelineError::InvalidConfig(
                "samples_per_mode must be at least 1".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PipelineError::InvalidConfig(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub scene_id: String,
    pub free_set: TrajectorySet,
    pub prefilled_set: TrajectorySet,
    pub free_plan: MetaActionPlan,
    pub minade_free: f64,
    pub minade_pf: f64,
    pub free_iou: f64,
}

impl RolloutResult {
    /// Recomputes both minADE values from the stored sets.
    pub fn recompute(&self, expert: &Trajectory) -> Result<(f64, f64), GeoError> {
        Ok((
            min_ade(&self.free_set, expert)?,
            min_ade(&self.prefilled_set, expert)?,
        ))
    }
}

/// Poses as they will be stored, so stored sets reproduce stored metrics.
fn stored_precision(traj: &Trajectory) -> Trajectory {
    let r = |v: f64| round_sig(v, SIGNIFICANT_DIGITS);
    let poses = traj
        .poses()
        .iter()
        .map(|p| Pose::from([r(p.x), r(p.y), r(p.z), r(p.heading)]))
        .collect();
    Trajectory::new(poses).expect("rounding keeps poses finite")
}

/// Most frequent plan; ties go to the earliest sample.
pub fn modal_plan(plans: &[MetaActionPlan]) -> Option<&MetaActionPlan> {
    let mut counts: HashMap<&MetaActionPlan, (usize, usize)> = HashMap::new();
    for (i, p) in plans.iter().enumerate() {
        counts.entry(p).or_insert((0, i)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(p, _)| p)
}

pub fn sample_seed(cfg: &RolloutConfig, scene_id: &str, index: usize) -> u64 {
    derive_seed(cfg.seed, scene_id, index as u64)
}

/// `k` free and `k` prefilled samples for one scene. Sample `i` of both
/// modes shares a seed.
pub fn rollout_scene<P: PolicyClient + ?Sized>(
    policy: &P,
    scene: &Scene,
    cfg: &RolloutConfig,
) -> Result<RolloutResult, PipelineError> {
    cfg.validate()?;
    let id = &scene.id;
    let payload = ScenePayload::from_scene(scene, cfg.include_route);
    let gt_text = render_plan(&scene.gt_plan);
    let call = |mode: PolicyMode, i: usize| -> Result<AssistantResponse, PipelineError> {
        let req = PolicyRequest {
            mode,
            scene: payload.clone(),
            plan: (mode == PolicyMode::Prefilled).then(|| gt_text.clone()),
            temperature: cfg.temperature,
            seed: sample_seed(cfg, id, i),
        };
        let text = policy.call(&req).map_err(|source| PipelineError::Policy {
            scene: id.clone(),
            source,
        })?;
        parse_response(&text).map_err(|source| PipelineError::Response {
            scene: id.clone(),
            source,
        })
    };
    let mut free = Vec::with_capacity(cfg.samples_per_mode);
    let mut plans = Vec::with_capacity(cfg.samples_per_mode);
    let mut prefilled = Vec::with_capacity(cfg.samples_per_mode);
    for i in 0..cfg.samples_per_mode {
        let r = call(PolicyMode::Free, i)?;
        free.push(stored_precision(&detokenize_traj(&r.traj_tokens)));
        plans.push(
            r.final_plan()
                .cloned()
                .expect("strict parse requires a plan"),
        );
        let r = call(PolicyMode::Prefilled, i)?;
        prefilled.push(stored_precision(&detokenize_traj(&r.traj_tokens)));
    }
    let geo = |source| PipelineError::Geo {
        scene: id.clone(),
        source,
    };
    let free_set = TrajectorySet::new(free).map_err(geo)?;
    let prefilled_set = TrajectorySet::new(prefilled).map_err(geo)?;
    let free_plan = modal_plan(&plans).expect("k >= 1").clone();
    Ok(RolloutResult {
        scene_id: id.clone(),
        minade_free: min_ade(&free_set, &scene.expert_future).map_err(geo)?,
        minade_pf: min_ade(&prefilled_set, &scene.expert_future).map_err(geo)?,
        free_iou: plan_iou(&free_plan, &scene.gt_plan),
        free_set,
        prefilled_set,
        free_plan,
    })
}

/// Rolls out every scene; failing scenes are logged and returned separately.
pub fn rollout_corpus<P: PolicyClient + ?Sized>(
    policy: &P,
    scenes: &[Scene],
    cfg: &RolloutConfig,
) -> (Vec<RolloutResult>, Vec<PipelineError>) {
    let outcomes = par::map_ordered(scenes, |s| rollout_scene(policy, s, cfg));
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("skipping: {e}");
                failed.push(e);
            }
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub epsilon: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { epsilon: 0.5 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(PipelineError::InvalidConfig(
                "epsilon must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Keep scenes where the prefilled plan helps and free generation is not
/// already good enough.
pub fn filter_decision(result: &RolloutResult, cfg: &FilterConfig) -> bool {
    disagreement(result.minade_free, result.minade_pf, cfg.epsilon)
}

pub fn disagreement(minade_free: f64, minade_pf: f64, epsilon: f64) -> bool {
    minade_pf < minade_free && minade_free > epsilon
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub scene_id: String,
    pub minade_free: f64,
    pub minade_pf: f64,
    pub free_iou: f64,
    pub selected: bool,
}

pub fn scatter_export(results: &[RolloutResult], cfg: &FilterConfig) -> Vec<ScatterRow> {
    results
        .iter()
        .map(|r| ScatterRow {
            scene_id: r.scene_id.clone(),
            minade_free: r.minade_free,
            minade_pf: r.minade_pf,
            free_iou: r.free_iou,
            selected: filter_decision(r, cfg),
        })
        .collect()
}

/// Settings shared by CF record assembly and labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub filter: FilterConfig,
    pub constraints: ReasoningConstraints,
    pub loss: LossPolicy,
    /// CF round the records belong to.
    pub round: u32,
    pub include_route: bool,
    /// Teacher attempts per scene before giving up.
    pub max_attempts: u32,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            constraints: ReasoningConstraints::default(),
            loss: LossPolicy::default(),
            round: 1,
            include_route: false,
            max_attempts: 3,
        }
    }
}

/// The content of a counterfactual training example before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct CfSample {
    pub scene_id: String,
    pub wrong_plan: MetaActionPlan,
    pub reasoning: String,
    pub corrected_plan: MetaActionPlan,
    pub expert_tokens: crate::codec::TrajTokens,
}

impl CfSample {
    pub fn from_parts(scene: &Scene, result: &RolloutResult, reasoning: &str) -> Self {
        Self {
            scene_id: scene.id.clone(),
            wrong_plan: result.free_plan.clone(),
            reasoning: reasoning.trim().to_string(),
            corrected_plan: scene.gt_plan.clone(),
            expert_tokens: tokenize_traj_clamped(&scene.expert_future).0,
        }
    }
}

fn record_error(scene: &str) -> impl Fn(CodecError) -> PipelineError + '_ {
    move |source| PipelineError::Response {
        scene: scene.to_string(),
        source,
    }
}

pub fn assemble_cf_sample(
    scene: &Scene,
    result: &RolloutResult,
    reasoning: &str,
    cfg: &LabelConfig,
) -> Result<TrainingRecord, PipelineError> {
    if result.scene_id != scene.id {
        return Err(PipelineError::IdMismatch(result.scene_id.clone()));
    }
    if !filter_decision(result, &cfg.filter) {
        return Err(PipelineError::NotFiltered(scene.id.clone()));
    }
    if let Verdict::Reject(rejection) = validate_reasoning(reasoning, &cfg.constraints) {
        return Err(PipelineError::InvalidReasoning {
            scene: scene.id.clone(),
            rejection,
        });
    }
    let sample = CfSample::from_parts(scene, result, reasoning);
    let err = record_error(&scene.id);
    let prompt = render_prompt(scene, Task::MetaTraj, cfg.include_route).map_err(&err)?;
    let response = AssistantResponse::new(
        Some(sample.wrong_plan),
        Some(sample.reasoning),
        Some(sample.corrected_plan),
        sample.expert_tokens,
    )
    .map_err(&err)?;
    TrainingRecord::new(
        &scene.id,
        Provenance::Cf,
        cfg.round,
        prompt,
        response,
        &cfg.loss,
    )
    .map_err(&err)
}

/// Asks the teacher for one validated paragraph, re-asking on rejection.
pub fn request_reasoning<T: TeacherClient + ?Sized>(
    teacher: &T,
    scene: &Scene,
    result: &RolloutResult,
    cfg: &LabelConfig,
) -> Result<String, PipelineError> {
    let mut req = TeacherRequest::new(
        ScenePayload::from_scene(scene, cfg.include_route),
        &result.free_plan,
        &scene.gt_plan,
    );
    let mut last = Rejection::Empty;
    for attempt in 0..cfg.max_attempts.max(1) {
        req.attempt = attempt;
        let text = teacher
            .call(&req)
            .map_err(|source| PipelineError::Teacher {
                scene: scene.id.clone(),
                source,
            })?;
        match validate_reasoning(text.trim(), &cfg.constraints) {
            Verdict::Accept => return Ok(text.trim().to_string()),
            Verdict::Reject(r) => {
                log::debug!("{}: attempt {attempt} rejected: {r}", scene.id);
                last = r;
            }
        }
    }
    Err(PipelineError::InvalidReasoning {
        scene: scene.id.clone(),
        rejection: last,
    })
}

/// Labels every selected result. Output follows `results` order; failures
/// are logged and returned separately.
pub fn label_cf_corpus<T: TeacherClient + ?Sized>(
    teacher: &T,
    scenes: &[Scene],
    results: &[RolloutResult],
    cfg: &LabelConfig,
) -> (Vec<TrainingRecord>, Vec<PipelineError>) {
    let by_id: HashMap<&str, &Scene> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    let selected: Vec<&RolloutResult> = results
        .iter()
        .filter(|r| filter_decision(r, &cfg.filter))
        .collect();
    let outcomes = par::map_ordered(&selected, |r| {
        let scene = by_id
            .get(r.scene_id.as_str())
            .ok_or_else(|| PipelineError::IdMismatch(r.scene_id.clone()))?;
        let reasoning = request_reasoning(teacher, scene, r, cfg)?;
        assemble_cf_sample(scene, r, &reasoning, cfg)
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("skipping: {e}");
                failed.push(e);
            }
        }
    }
    (ok, failed)
}

/// Trajectory-only record with the expert future as the answer.
pub fn traj_record(
    scene: &Scene,
    loss: &LossPolicy,
    include_route: bool,
) -> Result<TrainingRecord, PipelineError> {
    let err = record_error(&scene.id);
    let prompt = render_prompt(scene, Task::TrajOnly, include_route).map_err(&err)?;
    let tokens = tokenize_traj_clamped(&scene.expert_future).0;
    let response = AssistantResponse::new(None, None, None, tokens).map_err(&err)?;
    TrainingRecord::new(&scene.id, Provenance::TrajOnly, 0, prompt, response, loss).map_err(&err)
}

/// Meta-action record: the scene's plan, then the expert future.
pub fn meta_record(
    scene: &Scene,
    loss: &LossPolicy,
    include_route: bool,
) -> Result<TrainingRecord, PipelineError> {
    let err = record_error(&scene.id);
    let prompt = render_prompt(scene, Task::MetaTraj, include_route).map_err(&err)?;
    let tokens = tokenize_traj_clamped(&scene.expert_future).0;
    let response =
        AssistantResponse::new(Some(scene.gt_plan.clone()), None, None, tokens).map_err(&err)?;
    TrainingRecord::new(&scene.id, Provenance::Meta, 0, prompt, response, loss).map_err(&err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetId {
    Traj,
    Meta,
    Cf(u32),
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetId::Traj => f.write_str("traj"),
            DatasetId::Meta => f.write_str("meta"),
            DatasetId::Cf(r) => write!(f, "cf_round_{r}"),
        }
    }
}

impl FromStr for DatasetId {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "traj" => Ok(DatasetId::Traj),
            "meta" => Ok(DatasetId::Meta),
            _ => s
                .strip_prefix("cf_round_")
                .and_then(|r| r.parse().ok())
                .filter(|&r| r >= 1)
                .map(DatasetId::Cf)
                .ok_or_else(|| PipelineError::UnknownDataset(s.to_string())),
        }
    }
}

impl Serialize for DatasetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixEntry {
    pub dataset: DatasetId,
    pub multiplier: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMixSpec {
    pub entries: Vec<MixEntry>,
    #[serde(default)]
    pub seed: u64,
    /// Buffer size for the streaming shuffle; `None` shuffles globally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl DatasetMixSpec {
    pub fn new(entries: impl IntoIterator<Item = (DatasetId, u32)>, seed: u64) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(dataset, multiplier)| MixEntry {
                    dataset,
                    multiplier,
                })
                .collect(),
            seed,
            window: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.entries.iter().any(|e| e.multiplier > 0) {
            return Err(PipelineError::InvalidConfig(
                "mix needs at least one positive multiplier".into(),
            ));
        }
        if self.window == Some(0) {
            return Err(PipelineError::InvalidConfig(
                "shuffle window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn datasets(&self) -> impl Iterator<Item = DatasetId> + '_ {
        self.entries.iter().map(|e| e.dataset)
    }
}

/// Buffered shuffle: each incoming item displaces a random buffered one,
/// so memory stays at `window` items.
fn windowed_shuffle<T, R: Rng>(
    items: impl IntoIterator<Item = T>,
    window: usize,
    rng: &mut R,
) -> Vec<T> {
    let mut buf: Vec<T> = Vec::with_capacity(window);
    let mut out = Vec::new();
    for item in items {
        if buf.len() < window {
            buf.push(item);
            continue;
        }
        let i = rng.random_range(0..window);
        out.push(std::mem::replace(&mut buf[i], item));
    }
    buf.shuffle(rng);
    out.extend(buf);
    out
}

/// Repeats each source by its multiplier and shuffles the union by seed.
pub fn mix_datasets<T: Clone>(
    spec: &DatasetMixSpec,
    sources: &HashMap<DatasetId, Vec<T>>,
) -> Result<Vec<T>, PipelineError> {
    spec.validate()?;
    let mut expanded = Vec::new();
    for e in &spec.entries {
        let src = sources
            .get(&e.dataset)
            .ok_or_else(|| PipelineError::UnknownDataset(e.dataset.to_string()))?;
        for _ in 0..e.multiplier {
            expanded.extend(src.iter().cloned());
        }
    }
    let mut r = rng(spec.seed);
    Ok(match spec.window {
        None => {
            expanded.shuffle(&mut r);
            expanded
        }
        Some(w) => windowed_shuffle(expanded, w, &mut r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundVariant {
    ThreeDs,
    FourDs,
}

impl FromStr for RoundVariant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three_ds" | "3ds" => Ok(RoundVariant::ThreeDs),
            "four_ds" | "4ds" => Ok(RoundVariant::FourDs),
            _ => Err(PipelineError::InvalidConfig(format!(
                "unknown round variant `{s}`"
            ))),
        }
    }
}

/// Mixture for training round `round`. `three_ds` uses only the newest CF
/// set; `four_ds` also keeps every earlier round.
pub fn plan_round(
    round: u32,
    variant: RoundVariant,
    available: &BTreeSet<u32>,
    seed: u64,
) -> Result<DatasetMixSpec, PipelineError> {
    if round == 0 {
        return Err(PipelineError::InvalidConfig("rounds start at 1".into()));
    }
    let rounds: Vec<u32> = match variant {
        RoundVariant::ThreeDs => vec![round],
        RoundVariant::FourDs => (1..=round).collect(),
    };
    if let Some(&missing) = rounds.iter().find(|r| !available.contains(r)) {
        return Err(PipelineError::MissingRound(missing));
    }
    let mut entries = vec![(DatasetId::Traj, 1), (DatasetId::Meta, 1)];
    entries.extend(rounds.into_iter().map(|r| (DatasetId::Cf(r), 1)));
    Ok(DatasetMixSpec::new(entries, seed))
}
