use std::collections::HashMap;

use super::{
    ClientError, PolicyClient, PolicyMode, PolicyRequest, TeacherClient, TeacherRequest,
    MAX_REASONING_WORDS,
};
use crate::codec::{
    tokenize_traj_clamped, AssistantResponse, ACTION, META_ACTIONS, TRAJ_FUTURE_END,
    TRAJ_FUTURE_START,
};
use crate::metaction::{diff_plans, format_seconds, ActionLabel, MetaActionPlan, PlanDiff};
use crate::scenelab::{decode_plan_to_traj, perturb_plan, Scene};
use crate::seed::derive_seed;

/// Decode noise (meters, per axis) per unit of sampling temperature.
pub const MOCK_NOISE_PER_TEMPERATURE: f64 = 0.25;

/// Stands in for a meta-action policy without counterfactual reasoning.
///
/// Free mode perturbs the scene's plan with strength `strength`, prefilled
/// mode follows the supplied plan. Both decode through the fixed control
/// table with temperature-scaled waypoint noise and never think.
#[derive(Debug, Clone)]
pub struct MockPolicy {
    plans: HashMap<String, MetaActionPlan>,
    strength: f64,
}

impl MockPolicy {
    pub fn new<'a>(scenes: impl IntoIterator<Item = &'a Scene>, strength: f64) -> Self {
        Self {
            plans: scenes
                .into_iter()
                .map(|s| (s.id.clone(), s.gt_plan.clone()))
                .collect(),
            strength: strength.clamp(0.0, 1.0),
        }
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }
}

impl PolicyClient for MockPolicy {
    fn call(&self, req: &PolicyRequest) -> Result<String, ClientError> {
        let supplied = req.validate()?;
        let noise = MOCK_NOISE_PER_TEMPERATURE * req.temperature;
        let noise_seed = derive_seed(req.seed, "noise", 0);
        match (req.mode, supplied) {
            (PolicyMode::Prefilled, Some(plan)) => {
                let traj = decode_plan_to_traj(&plan, &req.scene.history, noise_seed, noise);
                let (tokens, _) = tokenize_traj_clamped(&traj);
                let text = req.plan.as_deref().unwrap_or_default().trim_end();
                Ok(format!("{META_ACTIONS}\n{text}\n\n{ACTION}\n{TRAJ_FUTURE_START}{tokens}{TRAJ_FUTURE_END}"))
            }
            _ => {
                let gt = self
                    .plans
                    .get(&req.scene.scene_id)
                    .ok_or_else(|| ClientError::UnknownScene(req.scene.scene_id.clone()))?;
                let plan = perturb_plan(gt, derive_seed(req.seed, "plan", 0), self.strength);
                let traj = decode_plan_to_traj(&plan, &req.scene.history, noise_seed, noise);
                let (tokens, _) = tokenize_traj_clamped(&traj);
                let response = AssistantResponse::new(Some(plan), None, None, tokens)
                    .map_err(|e| ClientError::Malformed(e.to_string()))?;
                Ok(response.raw_text)
            }
        }
    }
}

/// Template teacher: one sentence for each of the (up to) three longest
/// disagreements between the two plans, stopping before the word budget.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubTeacher;

const MAX_SENTENCES: usize = 3;

fn phrase(label: ActionLabel) -> &'static str {
    match label {
        ActionLabel::Accelerate => "speeding up",
        ActionLabel::Decelerate => "slowing down",
        ActionLabel::KeepSpeed => "holding speed",
        ActionLabel::Wait => "waiting",
        ActionLabel::Reverse => "reversing",
        ActionLabel::Straight => "going straight",
        ActionLabel::LeftTurn => "turning left",
        ActionLabel::RightTurn => "turning right",
        ActionLabel::KeepLane => "lane keeping",
        ActionLabel::LeftLaneChange => "a left lane change",
        ActionLabel::RightLaneChange => "a right lane change",
    }
}

fn sentence(d: &PlanDiff) -> String {
    let span = format!(
        "from {}s to {}s",
        format_seconds(d.start),
        format_seconds(d.end)
    );
    match (d.pred, d.gt) {
        (Some(p), Some(g)) => format!(
            "Choosing {} {span} does not fit the traffic around the car; {} there keeps the motion safe and smooth.",
            phrase(p),
            phrase(g)
        ),
        (None, Some(g)) => format!(
            "The plan leaves the {} intent open {span}; adding {} there makes the maneuver explicit.",
            d.group,
            phrase(g)
        ),
        (Some(p), None) => format!(
            "The {} intent of {} {span} is not needed and should be dropped.",
            d.group,
            phrase(p)
        ),
        (None, None) => String::new(),
    }
}

impl StubTeacher {
    pub fn reason(predicted: &MetaActionPlan, expert: &MetaActionPlan) -> String {
        let mut diffs = diff_plans(predicted, expert);
        // longest first, then by group and time for a stable order
        diffs.sort_by_key(|d| (std::cmp::Reverse(d.end - d.start), d.group, d.start));
        let mut sentences: Vec<String> = Vec::new();
        let mut words = 0;
        for s in diffs.iter().take(MAX_SENTENCES).map(sentence) {
            let n = s.split_whitespace().count();
            if !sentences.is_empty() && words + n > MAX_REASONING_WORDS {
                break;
            }
            words += n;
            sentences.push(s);
        }
        if sentences.is_empty() {
            return "The predicted maneuver already suits the scene and needs no adjustment."
                .to_string();
        }
        sentences.join(" ")
    }
}

impl TeacherClient for StubTeacher {
    fn call(&self, req: &TeacherRequest) -> Result<String, ClientError> {
        let (predicted, expert) = req.plans()?;
        Ok(Self::reason(&predicted, &expert))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{validate_reasoning, ReasoningConstraints, ScenePayload, Verdict};
    use crate::codec::parse_response;
    use crate::metaction::{parse_plan, render_plan, GroupTimeline};
    use crate::scenelab::{synth_suite, ScriptSuite};

    fn scene() -> Scene {
        synth_suite(ScriptSuite::LaneChange, 1, 3)
            .unwrap()
            .remove(0)
    }

    fn request(scene: &Scene, mode: PolicyMode, seed: u64) -> PolicyRequest {
        PolicyRequest {
            mode,
            scene: ScenePayload::from_scene(scene, false),
            plan: (mode == PolicyMode::Prefilled).then(|| render_plan(&scene.gt_plan)),
            temperature: 0.8,
            seed,
        }
    }

    #[test]
    fn free_mode_strength_zero_returns_gt_plan() {
        let s = scene();
        let policy = MockPolicy::new([&s], 0.0);
        let r = parse_response(&policy.call(&request(&s, PolicyMode::Free, 5)).unwrap()).unwrap();
        assert_eq!(r.initial_plan.as_ref(), Some(&s.gt_plan));
        assert!(r.thinking.is_none());
    }

    #[test]
    fn prefilled_plan_text_is_verbatim() {
        let s = scene();
        let policy = MockPolicy::new([&s], 0.5);
        let req = request(&s, PolicyMode::Prefilled, 5);
        let text = policy.call(&req).unwrap();
        assert!(text.starts_with(&format!(
            "Meta Actions:\n{}\n\nAction:\n",
            req.plan.as_ref().unwrap()
        )));
        parse_response(&text).unwrap();
    }

    #[test]
    fn strength_zero_free_equals_prefilled() {
        let s = scene();
        let policy = MockPolicy::new([&s], 0.0);
        let free =
            parse_response(&policy.call(&request(&s, PolicyMode::Free, 9)).unwrap()).unwrap();
        let pf =
            parse_response(&policy.call(&request(&s, PolicyMode::Prefilled, 9)).unwrap()).unwrap();
        assert_eq!(free.traj_tokens, pf.traj_tokens);
    }

    #[test]
    fn identical_requests_identical_bytes() {
        let s = scene();
        let policy = MockPolicy::new([&s], 0.3);
        let req = request(&s, PolicyMode::Free, 11);
        assert_eq!(policy.call(&req).unwrap(), policy.call(&req).unwrap());
    }

    #[test]
    fn unknown_scene_and_bad_requests() {
        let s = scene();
        let policy = MockPolicy::new(std::iter::empty(), 0.3);
        assert!(matches!(
            policy.call(&request(&s, PolicyMode::Free, 1)),
            Err(ClientError::UnknownScene(_))
        ));
        let mut req = request(&s, PolicyMode::Prefilled, 1);
        req.plan = None;
        assert!(matches!(
            policy.call(&req),
            Err(ClientError::InvalidRequest(_))
        ));
    }

    #[test]
    fn stub_mentions_adding_lane_keeping() {
        let expert =
            MetaActionPlan::from_timelines([GroupTimeline::constant(ActionLabel::KeepLane)])
                .unwrap();
        let predicted =
            MetaActionPlan::from_timelines([GroupTimeline::constant(ActionLabel::Straight)])
                .unwrap();
        let text = StubTeacher::reason(&predicted, &expert);
        assert!(text.contains("adding lane keeping"), "{text}");
        assert_eq!(
            validate_reasoning(&text, &ReasoningConstraints::default()),
            Verdict::Accept
        );
    }

    #[test]
    fn stub_is_deterministic_and_valid() {
        let s = scene();
        let wrong = parse_plan("- longitudinal\n  - 0.0s-6.4s: Accelerate\n- lateral\n  - 0.0s-3.0s: Left Turn\n  - 3.0s-6.4s: Right Turn\n- lane\n  - 0.0s-6.4s: Keep Lane").unwrap();
        let req = TeacherRequest::new(ScenePayload::from_scene(&s, false), &wrong, &s.gt_plan);
        let a = StubTeacher.call(&req).unwrap();
        assert_eq!(a, StubTeacher.call(&req).unwrap());
        assert_eq!(
            validate_reasoning(&a, &ReasoningConstraints::default()),
            Verdict::Accept,
            "{a}"
        );
    }

    #[test]
    fn stub_stays_within_word_budget() {
        let plan = |text: &str| parse_plan(text).unwrap();
        let predicted = plan("- lane\n  - 0.0s-0.2s: Keep Lane\n  - 0.2s-0.8s: Left Lane Change\n  - 0.8s-1.4s: Keep Lane\n  - 1.4s-1.9s: Left Lane Change\n  - 1.9s-5.6s: Keep Lane\n  - 5.6s-6.4s: Left Lane Change");
        let expert = plan("- lane\n  - 0.0s-6.4s: Right Lane Change");
        let text = StubTeacher::reason(&predicted, &expert);
        assert!(
            text.split_whitespace().count() <= MAX_REASONING_WORDS,
            "{text}"
        );
        assert_eq!(text.matches("Choosing").count(), 2, "{text}");
    }
}
