use serde::{Deserialize, Serialize};

use super::{CodecError, TRAJ_HISTORY_END};
use crate::scenelab::Scene;
use crate::trajgeo::Route;

/// Policy system prompt, verbatim.
pub const POLICY_SYSTEM_PROMPT: &str = include_str!("prompts/policy_system.txt");
/// Teacher system prompt, verbatim.
pub const TEACHER_SYSTEM_PROMPT: &str = include_str!("prompts/teacher_system.txt");
const POLICY_USER: &str = include_str!("prompts/policy_user.txt");
const TEACHER_USER_TEMPLATE: &str = include_str!("prompts/teacher_user.txt");

const TRAJ_ONLY_INSTRUCTION: &str =
    "Generate a possible future trajectory. Use the output format below.\n\n\
Action:\n<|traj_future_start|>[6 tokens]<|traj_future_end|>";

const CAMERAS: [&str; 2] = ["camera_front_wide_120fov", "camera_front_tele_30fov"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TrajOnly,
    MetaTraj,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// Opaque camera references standing in for video content.
    pub visual_refs: Vec<String>,
    pub history_marker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_block: Option<String>,
}

impl PromptBundle {
    /// System then user text, the prefix every loss span offset is measured from.
    pub fn text(&self) -> String {
        let mut s = String::with_capacity(self.system.len() + self.user.len());
        s.push_str(&self.system);
        s.push_str(&self.user);
        s
    }

    pub fn len(&self) -> usize {
        self.system.len() + self.user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn one_decimal(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    // avoid "-0.0"
    format!("{:.1}", if r == 0.0 { 0.0 } else { r })
}

/// `The route is:` followed by one `(x, y)` line per waypoint.
pub fn route_block(route: &Route) -> String {
    let mut out = String::from("The route is:\n");
    for w in route.waypoints() {
        out.push_str(&format!("({}, {})\n", one_decimal(w[0]), one_decimal(w[1])));
    }
    out
}

pub fn render_prompt(
    scene: &Scene,
    task: Task,
    include_route: bool,
) -> Result<PromptBundle, CodecError> {
    let route_block = if include_route {
        Some(route_block(
            scene.route.as_ref().ok_or(CodecError::MissingRoute)?,
        ))
    } else {
        None
    };
    let split = POLICY_USER
        .find(TRAJ_HISTORY_END)
        .expect("template carries the history marker")
        + TRAJ_HISTORY_END.len();
    let (context, meta_instruction) = POLICY_USER.split_at(split);
    let mut user = String::from(context);
    if let Some(block) = &route_block {
        user.push_str(block);
    }
    user.push_str(match task {
        Task::MetaTraj => meta_instruction,
        Task::TrajOnly => TRAJ_ONLY_INSTRUCTION,
    });
    Ok(PromptBundle {
        system: POLICY_SYSTEM_PROMPT.to_string(),
        user,
        visual_refs: CAMERAS.iter().map(|c| c.to_string()).collect(),
        history_marker: super::TRAJ_HISTORY.to_string(),
        route_block,
    })
}

/// Teacher user prompt with both plan texts substituted.
pub fn teacher_user_prompt(predicted_plan: &str, expert_plan: &str) -> String {
    TEACHER_USER_TEMPLATE
        .replace("{expert_plan}", expert_plan)
        .replace("{predicted_plan}", predicted_plan)
}
