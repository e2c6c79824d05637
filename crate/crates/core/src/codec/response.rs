use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    CodecError, TrajTokens, ACTION, META_ACTIONS, THINKING, TRAJ_FUTURE_END, TRAJ_FUTURE_START,
};
use crate::metaction::{parse_plan, render_plan, MetaActionPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Header {
    Meta,
    Thinking,
    Action,
}

/// A header occurrence: kind, byte offset of the header, byte offset of its body.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Section {
    pub kind: Header,
    pub start: usize,
    pub body: usize,
    pub end: usize,
}

/// Headers are recognized only at the start of a line.
pub(crate) fn sections(text: &str) -> Vec<Section> {
    let mut found: Vec<(Header, usize, usize)> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let lead = line.len() - trimmed.len();
        for (kind, marker) in [
            (Header::Meta, META_ACTIONS),
            (Header::Thinking, THINKING),
            (Header::Action, ACTION),
        ] {
            if trimmed.starts_with(marker) {
                let at = offset + lead;
                found.push((kind, at, at + marker.len()));
                break;
            }
        }
        offset += line.len();
    }
    let mut out = Vec::with_capacity(found.len());
    for (i, &(kind, start, body)) in found.iter().enumerate() {
        let end = found.get(i + 1).map_or(text.len(), |next| next.1);
        out.push(Section {
            kind,
            start,
            body,
            end,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssistantResponse {
    pub initial_plan: Option<MetaActionPlan>,
    pub thinking: Option<String>,
    pub corrected_plan: Option<MetaActionPlan>,
    pub traj_tokens: TrajTokens,
    pub raw_text: String,
    pub token_count: usize,
}

impl AssistantResponse {
    /// Builds the canonical rendering of the given parts.
    pub fn new(
        initial_plan: Option<MetaActionPlan>,
        thinking: Option<String>,
        corrected_plan: Option<MetaActionPlan>,
        traj_tokens: TrajTokens,
    ) -> Result<Self, CodecError> {
        if corrected_plan.is_some() && thinking.is_none() {
            return Err(CodecError::OrphanCorrection);
        }
        if thinking.is_some() && initial_plan.is_none() {
            return Err(CodecError::MissingInitialPlan);
        }
        if let Some(t) = &thinking {
            if t.trim().is_empty() {
                return Err(CodecError::Malformed("empty thinking".into()));
            }
        }
        let raw_text = render_response(
            initial_plan.as_ref(),
            thinking.as_deref(),
            corrected_plan.as_ref(),
            &traj_tokens,
        );
        Ok(Self {
            token_count: raw_text.split_whitespace().count(),
            initial_plan,
            thinking: thinking.map(|t| t.trim().to_string()),
            corrected_plan,
            traj_tokens,
            raw_text,
        })
    }

    /// The plan the trajectory is conditioned on: the correction if any.
    pub fn final_plan(&self) -> Option<&MetaActionPlan> {
        self.corrected_plan.as_ref().or(self.initial_plan.as_ref())
    }
}

impl Serialize for AssistantResponse {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw_text)
    }
}

impl<'de> Deserialize<'de> for AssistantResponse {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_response_lenient(&text).map_err(serde::de::Error::custom)
    }
}

/// Canonical text for a response. Blocks are separated by a blank line.
pub fn render_response(
    initial: Option<&MetaActionPlan>,
    thinking: Option<&str>,
    corrected: Option<&MetaActionPlan>,
    tokens: &TrajTokens,
) -> String {
    let mut blocks = Vec::new();
    if let Some(p) = initial {
        blocks.push(format!("{META_ACTIONS}\n{}", render_plan(p)));
    }
    if let Some(t) = thinking {
        blocks.push(format!("{THINKING}\n{}", t.trim()));
    }
    if let Some(p) = corrected {
        blocks.push(format!("{META_ACTIONS}\n{}", render_plan(p)));
    }
    blocks.push(format!(
        "{ACTION}\n{TRAJ_FUTURE_START}{tokens}{TRAJ_FUTURE_END}"
    ));
    blocks.join("\n\n")
}

fn parse_tokens(body: &str) -> Result<TrajTokens, CodecError> {
    let start = body
        .find(TRAJ_FUTURE_START)
        .ok_or(CodecError::MissingMarker(TRAJ_FUTURE_START))?;
    let rest = &body[start + TRAJ_FUTURE_START.len()..];
    let end = rest
        .find(TRAJ_FUTURE_END)
        .ok_or(CodecError::MissingMarker(TRAJ_FUTURE_END))?;
    rest[..end].parse()
}

fn parse_inner(text: &str, require_plan: bool) -> Result<AssistantResponse, CodecError> {
    let secs = sections(text);
    let action_at = secs
        .iter()
        .position(|s| s.kind == Header::Action)
        .ok_or(CodecError::MissingAction)?;
    let before = &secs[..action_at];
    let body = |s: &Section| &text[s.body..s.end];

    let (initial, thinking, corrected) =
        match before.iter().map(|s| s.kind).collect::<Vec<_>>().as_slice() {
            [] => (None, None, None),
            [Header::Meta] => (Some(&before[0]), None, None),
            [Header::Meta, Header::Thinking] => (Some(&before[0]), Some(&before[1]), None),
            [Header::Meta, Header::Thinking, Header::Meta] => {
                (Some(&before[0]), Some(&before[1]), Some(&before[2]))
            }
            [Header::Meta, Header::Meta, ..] => return Err(CodecError::OrphanCorrection),
            [Header::Thinking, ..] => return Err(CodecError::MissingInitialPlan),
            other => {
                return Err(CodecError::Malformed(format!(
                    "unexpected block order {other:?}"
                )))
            }
        };
    if require_plan && initial.is_none() {
        return Err(CodecError::MissingInitialPlan);
    }
    let initial_plan = initial.map(|s| parse_plan(body(s))).transpose()?;
    let thinking = thinking
        .map(|s| {
            let t = body(s).trim();
            if t.is_empty() {
                Err(CodecError::Malformed("empty thinking".into()))
            } else {
                Ok(t.to_string())
            }
        })
        .transpose()?;
    let corrected_plan = corrected.map(|s| parse_plan(body(s))).transpose()?;
    let traj_tokens = parse_tokens(body(&secs[action_at]))?;
    if secs.len() > action_at + 1 {
        return Err(CodecError::Malformed(
            "content after the action block".into(),
        ));
    }
    Ok(AssistantResponse {
        initial_plan,
        thinking,
        corrected_plan,
        traj_tokens,
        raw_text: text.to_string(),
        token_count: text.split_whitespace().count(),
    })
}

/// Parses a meta-action response; the initial plan is mandatory.
pub fn parse_response(text: &str) -> Result<AssistantResponse, CodecError> {
    parse_inner(text, true)
}

/// Like [`parse_response`] but also accepts trajectory-only responses.
pub fn parse_response_lenient(text: &str) -> Result<AssistantResponse, CodecError> {
    parse_inner(text, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinkStats {
    pub think_rate: f64,
    pub mean_output_length: f64,
    pub count: usize,
}

impl ThinkStats {
    pub fn report(&self) -> String {
        format_think(self.mean_output_length, self.think_rate)
    }
}

pub fn think_stats<'a>(
    corpus: impl IntoIterator<Item = &'a AssistantResponse>,
) -> Result<ThinkStats, CodecError> {
    let (n, thinking, tokens) =
        corpus
            .into_iter()
            .fold((0usize, 0usize, 0usize), |(n, th, tok), r| {
                (
                    n + 1,
                    th + usize::from(r.thinking.is_some()),
                    tok + r.token_count,
                )
            });
    if n == 0 {
        return Err(CodecError::EmptyCorpus);
    }
    Ok(ThinkStats {
        think_rate: thinking as f64 / n as f64,
        mean_output_length: tokens as f64 / n as f64,
        count: n,
    })
}

/// `"<mean length> (<think rate>)"`, e.g. `113.36 (0.148)`.
pub fn format_think(mean_output_length: f64, think_rate: f64) -> String {
    format!("{mean_output_length:.2} ({think_rate:.3})")
}
