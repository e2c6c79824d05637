use serde::{Deserialize, Serialize};

use super::response::{sections, Header};
use super::{AssistantResponse, CodecError, PromptBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanRole {
    Prompt,
    InitialMeta,
    Thinking,
    CorrectedMeta,
    Traj,
}

/// Byte range `[start, end)` of [`TrainingRecord::full_text`] with its
/// loss weight. Masked spans carry weight 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpan {
    pub role: SpanRole,
    pub start: usize,
    pub end: usize,
    pub weight: f64,
    pub masked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossPolicy {
    pub w_act: f64,
    pub w_meta: f64,
    pub w_cf: f64,
    pub mask_first_meta_on_cf: bool,
}

impl Default for LossPolicy {
    fn default() -> Self {
        Self {
            w_act: 1.0,
            w_meta: 10.0,
            w_cf: 10.0,
            mask_first_meta_on_cf: true,
        }
    }
}

impl LossPolicy {
    pub fn validate(&self) -> Result<(), CodecError> {
        for (name, w) in [
            ("w_act", self.w_act),
            ("w_meta", self.w_meta),
            ("w_cf", self.w_cf),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CodecError::InvalidRecord(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrajOnly,
    Meta,
    Cf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub scene_id: String,
    pub provenance: Provenance,
    /// CF round that minted the record; 0 for the base datasets.
    #[serde(default)]
    pub round: u32,
    pub prompt: PromptBundle,
    pub response: AssistantResponse,
    pub loss_spans: Vec<LossSpan>,
}

impl TrainingRecord {
    pub fn new(
        scene_id: impl Into<String>,
        provenance: Provenance,
        round: u32,
        prompt: PromptBundle,
        response: AssistantResponse,
        policy: &LossPolicy,
    ) -> Result<Self, CodecError> {
        let mut record = Self {
            scene_id: scene_id.into(),
            provenance,
            round,
            prompt,
            response,
            loss_spans: Vec::new(),
        };
        record.check_shape()?;
        record.loss_spans = assign_loss_spans(&record, policy);
        Ok(record)
    }

    fn check_shape(&self) -> Result<(), CodecError> {
        let r = &self.response;
        let ok = match self.provenance {
            Provenance::TrajOnly => r.initial_plan.is_none() && r.thinking.is_none(),
            Provenance::Meta => {
                r.initial_plan.is_some() && r.thinking.is_none() && r.corrected_plan.is_none()
            }
            Provenance::Cf => {
                r.initial_plan.is_some() && r.thinking.is_some() && r.corrected_plan.is_some()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CodecError::InvalidRecord(format!(
                "{}: response blocks do not fit a {:?} record",
                self.scene_id, self.provenance
            )))
        }
    }

    /// Checks the block structure and that the stored spans equal a fresh
    /// assignment under `policy`.
    pub fn validate(&self, policy: &LossPolicy) -> Result<(), CodecError> {
        self.check_shape()?;
        if self.loss_spans != assign_loss_spans(self, policy) {
            return Err(CodecError::InvalidRecord(format!(
                "{}: stale loss spans",
                self.scene_id
            )));
        }
        Ok(())
    }

    /// Prompt text followed by the assistant text; span offsets index this.
    pub fn full_text(&self) -> String {
        let mut s = self.prompt.text();
        s.push_str(&self.response.raw_text);
        s
    }
}

/// Partitions the record's full text into weighted spans. The prompt is one
/// masked span; each assistant block owns its header and trailing blank
/// lines, and any text before the first header joins the first block.
pub fn assign_loss_spans(record: &TrainingRecord, policy: &LossPolicy) -> Vec<LossSpan> {
    let offset = record.prompt.len();
    let text = &record.response.raw_text;
    let mut spans = vec![LossSpan {
        role: SpanRole::Prompt,
        start: 0,
        end: offset,
        weight: 0.0,
        masked: true,
    }];
    let mut seen_meta = false;
    let blocks = sections(text);
    for (i, sec) in blocks.iter().enumerate() {
        let role = match sec.kind {
            Header::Meta if seen_meta => SpanRole::CorrectedMeta,
            Header::Meta => {
                seen_meta = true;
                SpanRole::InitialMeta
            }
            Header::Thinking => SpanRole::Thinking,
            Header::Action => SpanRole::Traj,
        };
        let weight = match role {
            SpanRole::InitialMeta
                if record.provenance == Provenance::Cf && policy.mask_first_meta_on_cf =>
            {
                None
            }
            SpanRole::InitialMeta | SpanRole::CorrectedMeta => Some(policy.w_meta),
            SpanRole::Thinking => Some(policy.w_cf),
            SpanRole::Traj => Some(policy.w_act),
            SpanRole::Prompt => None,
        };
        let start = if i == 0 { 0 } else { sec.start };
        spans.push(LossSpan {
            role,
            start: offset + start,
            end: offset + sec.end,
            weight: weight.unwrap_or(0.0),
            masked: weight.is_none(),
        });
    }
    if blocks.is_empty() && !text.is_empty() {
        spans.push(LossSpan {
            role: SpanRole::Traj,
            start: offset,
            end: offset + text.len(),
            weight: policy.w_act,
            masked: false,
        });
    }
    spans
}
