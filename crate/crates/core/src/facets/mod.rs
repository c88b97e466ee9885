//! Six-facet behavior descriptions, user-goal classification, and assembly of
//! the per-conversation text that gets embedded.

mod goal;
mod heuristic;
pub mod prompts;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Conversation, Role, Turn};
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatModel};

pub use goal::{classify_goal, GoalCategory, GoalLabel, GoalSubcategory};
pub use heuristic::HeuristicAnnotator;

pub const DEFAULT_HISTORY_BUDGET: usize = 32_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetId {
    Requests,
    Responses,
    Context,
    CommunicationStyle,
    Damsl,
    Sgd,
}

impl FacetId {
    pub const ALL: [FacetId; 6] = [
        FacetId::Requests,
        FacetId::Responses,
        FacetId::Context,
        FacetId::CommunicationStyle,
        FacetId::Damsl,
        FacetId::Sgd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FacetId::Requests => "requests",
            FacetId::Responses => "responses",
            FacetId::Context => "context",
            FacetId::CommunicationStyle => "communication_style",
            FacetId::Damsl => "damsl",
            FacetId::Sgd => "sgd",
        }
    }

    pub fn header(&self) -> &'static str {
        match self {
            FacetId::Requests => "Requests:",
            FacetId::Responses => "Responses:",
            FacetId::Context => "Context:",
            FacetId::CommunicationStyle => "Communication style:",
            FacetId::Damsl => "DAMSL dialog acts:",
            FacetId::Sgd => "SGD dialog acts:",
        }
    }

    /// DAMSL and SGD describe each user utterance; the rest describe the whole
    /// conversation.
    pub fn is_utterance_level(&self) -> bool {
        matches!(self, FacetId::Damsl | FacetId::Sgd)
    }

    pub fn template(&self) -> &'static str {
        match self {
            FacetId::Requests => prompts::REQUESTS,
            FacetId::Responses => prompts::RESPONSES,
            FacetId::Context => prompts::CONTEXT,
            FacetId::CommunicationStyle => prompts::COMMUNICATION_STYLE,
            FacetId::Damsl => prompts::DAMSL,
            FacetId::Sgd => prompts::SGD,
        }
    }
}

impl fmt::Display for FacetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FacetId::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown facet {s:?}")))
    }
}

/// Parses a comma-separated facet list; `all` selects every facet.
pub fn parse_facet_subset(s: &str) -> Result<BTreeSet<FacetId>> {
    if s.trim() == "all" {
        return Ok(FacetId::ALL.into_iter().collect());
    }
    let set: BTreeSet<FacetId> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if set.is_empty() {
        return Err(Error::invalid("facet subset is empty"));
    }
    Ok(set)
}

/// User dialog acts adapted from Schema-Guided Dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SgdAct {
    Inform,
    Request,
    Affirm,
    Negate,
    Select,
    InformIntent,
    AffirmIntent,
    NegateIntent,
    RequestAlts,
    Thank,
    Goodbye,
    Greet,
}

impl SgdAct {
    pub const ALL: [SgdAct; 12] = [
        SgdAct::Inform,
        SgdAct::Request,
        SgdAct::Affirm,
        SgdAct::Negate,
        SgdAct::Select,
        SgdAct::InformIntent,
        SgdAct::AffirmIntent,
        SgdAct::NegateIntent,
        SgdAct::RequestAlts,
        SgdAct::Thank,
        SgdAct::Goodbye,
        SgdAct::Greet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SgdAct::Inform => "INFORM",
            SgdAct::Request => "REQUEST",
            SgdAct::Affirm => "AFFIRM",
            SgdAct::Negate => "NEGATE",
            SgdAct::Select => "SELECT",
            SgdAct::InformIntent => "INFORM_INTENT",
            SgdAct::AffirmIntent => "AFFIRM_INTENT",
            SgdAct::NegateIntent => "NEGATE_INTENT",
            SgdAct::RequestAlts => "REQUEST_ALTS",
            SgdAct::Thank => "THANK",
            SgdAct::Goodbye => "GOODBYE",
            SgdAct::Greet => "GREET",
        }
    }
}

impl FromStr for SgdAct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SgdAct::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dialog act {s:?}")))
    }
}

/// Splits an SGD reply into known acts and the unrecognized labels.
pub fn parse_sgd(reply: &str) -> (BTreeSet<SgdAct>, Vec<String>) {
    let mut acts = BTreeSet::new();
    let mut unknown = Vec::new();
    for raw in reply.split([',', '\n', ';']) {
        let label: String = raw
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .to_ascii_uppercase();
        if label.is_empty() {
            continue;
        }
        match label.parse::<SgdAct>() {
            Ok(a) => {
                acts.insert(a);
            }
            Err(_) => unknown.push(label),
        }
    }
    (acts, unknown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FacetPayload {
    /// Conversation-level facet: the prompt's JSON object, leaves as strings.
    Structured(Value),
    /// DAMSL: one sentence per user utterance.
    Sentences(Vec<String>),
    /// SGD: one act set per user utterance.
    Acts(Vec<BTreeSet<SgdAct>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetDescription {
    pub conversation_id: String,
    pub facet: FacetId,
    pub payload: FacetPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FacetConfig {
    /// Maximum characters of conversation history in a prompt; the oldest
    /// turns are dropped first.
    pub history_budget: usize,
}

impl Default for FacetConfig {
    fn default() -> Self {
        FacetConfig {
            history_budget: DEFAULT_HISTORY_BUDGET,
        }
    }
}

fn speaker(role: Role) -> &'static str {
    match role {
        Role::User => "User",
        Role::Assistant => "Assistant",
    }
}

/// Renders turns as `User: ...` / `Assistant: ...` blocks, keeping the most
/// recent turns that fit in `budget` characters. A single turn longer than the
/// budget is cut to its first `budget` characters.
pub fn render_history(turns: &[Turn], users_only: bool, budget: usize) -> String {
    let blocks: Vec<String> = turns
        .iter()
        .filter(|t| !users_only || t.role == Role::User)
        .map(|t| format!("{}: {}", speaker(t.role), t.content))
        .collect();
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0usize;
    for b in blocks.iter().rev() {
        let len = b.chars().count() + if kept.is_empty() { 0 } else { 2 };
        if used + len > budget {
            if kept.is_empty() {
                kept.push(b.chars().take(budget).collect());
            }
            break;
        }
        used += len;
        kept.push(b.clone());
    }
    let dropped = blocks.len() - kept.len();
    kept.reverse();
    let body = kept.join("\n\n");
    if dropped > 0 {
        log::debug!("history truncated: {dropped} oldest turns dropped");
    }
    body
}

const JSON_REPROMPT: &str = "Your reply could not be parsed as the required JSON object. Reply again with only the JSON object in the exact format requested, with no other text.";
const SGD_REPROMPT: &str = "Your reply contained no dialogue act from the list. Reply again with only the applicable dialogue acts, separated by commas.";
const DAMSL_REPROMPT: &str = "Your reply was empty. Reply again with only the one-sentence description.";

/// Sends `prompt`, parses the reply, and on a parse failure reprompts once
/// with the failed reply in context.
pub(crate) fn ask_parsed<T>(
    chat: &dyn ChatModel,
    prompt: String,
    correction: &str,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<T> {
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = chat.chat("", &messages)?;
    let reason = match parse(&first) {
        Ok(v) => return Ok(v),
        Err(r) => r,
    };
    log::debug!("reprompting after unusable reply: {reason}");
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(correction));
    let second = chat.chat("", &messages)?;
    parse(&second).map_err(Error::Reply)
}

/// The JSON object in a reply, tolerating code fences and surrounding text.
pub(crate) fn extract_json_object(reply: &str) -> std::result::Result<Value, String> {
    let (a, b) = reply
        .find('{')
        .zip(reply.rfind('}'))
        .filter(|(a, b)| a < b)
        .ok_or("reply contains no JSON object")?;
    serde_json::from_str(&reply[a..=b]).map_err(|e| format!("invalid JSON: {e}"))
}

fn leaf_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(leaf_text).filter(|s| !s.is_empty()).collect();
            Some(parts.join("; "))
        }
        Value::Object(map) => {
            let parts: Vec<String> = map
                .iter()
                .filter_map(|(k, v)| leaf_text(v).map(|t| format!("{k}: {t}")))
                .collect();
            Some(parts.join("; "))
        }
        Value::Null => None,
    }
}

/// Checks `reply` against the skeleton's keys and returns it restricted to the
/// skeleton, in skeleton order, with leaves rendered as strings.
fn conform(schema: &Value, reply: &Value, path: &str) -> std::result::Result<Value, String> {
    match schema {
        Value::Object(fields) => {
            let obj = reply
                .as_object()
                .ok_or_else(|| format!("{} must be an object", if path.is_empty() { "reply" } else { path }))?;
            let mut out = serde_json::Map::new();
            for (k, sub) in fields {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let v = obj.get(k).ok_or_else(|| format!("missing key {p}"))?;
                out.insert(k.clone(), conform(sub, v, &p)?);
            }
            Ok(Value::Object(out))
        }
        _ => leaf_text(reply)
            .map(Value::String)
            .ok_or_else(|| format!("{path} is null")),
    }
}

fn fill_conversation_prompt(conv: &Conversation, facet: FacetId, budget: usize) -> Result<String> {
    let history = render_history(&conv.turns, facet == FacetId::Requests, budget);
    prompts::fill(
        facet.template(),
        &[("user_goal", conv.goal.as_str()), ("conversation_history", history.as_str())],
    )
}

fn fill_utterance_prompt(conv: &Conversation, facet: FacetId, turn: usize, budget: usize) -> Result<String> {
    let mut history = render_history(&conv.turns[..turn], false, budget);
    if history.is_empty() {
        history = "(start of conversation)".into();
    }
    prompts::fill(
        facet.template(),
        &[
            ("conversation_history", history.as_str()),
            ("target_user_utterance", conv.turns[turn].content.as_str()),
        ],
    )
}

/// Describes one conversation along one facet. Utterance-level facets make one
/// call per user utterance. Provider failures propagate; a reply that stays
/// unusable after one reprompt is [`Error::Reply`].
pub fn describe_facet(
    conv: &Conversation,
    facet: FacetId,
    chat: &dyn ChatModel,
    config: &FacetConfig,
) -> Result<FacetDescription> {
    let user_turns: Vec<usize> = conv
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role == Role::User)
        .map(|(i, _)| i)
        .collect();
    let payload = match facet {
        FacetId::Damsl => {
            let mut out = Vec::with_capacity(user_turns.len());
            for &t in &user_turns {
                let prompt = fill_utterance_prompt(conv, facet, t, config.history_budget)?;
                out.push(ask_parsed(chat, prompt, DAMSL_REPROMPT, |r| {
                    let s = r.split_whitespace().collect::<Vec<_>>().join(" ");
                    if s.is_empty() {
                        Err("empty description".into())
                    } else {
                        Ok(s)
                    }
                })?);
            }
            FacetPayload::Sentences(out)
        }
        FacetId::Sgd => {
            let mut out = Vec::with_capacity(user_turns.len());
            for &t in &user_turns {
                let prompt = fill_utterance_prompt(conv, facet, t, config.history_budget)?;
                out.push(ask_parsed(chat, prompt, SGD_REPROMPT, |r| {
                    let (acts, unknown) = parse_sgd(r);
                    if !unknown.is_empty() {
                        log::warn!(
                            "conversation {}: dropped unknown dialog acts {:?}",
                            conv.id,
                            unknown
                        );
                    }
                    if acts.is_empty() {
                        Err("no known dialog act".into())
                    } else {
                        Ok(acts)
                    }
                })?);
            }
            FacetPayload::Acts(out)
        }
        _ => {
            let schema = prompts::skeleton(facet.template())?;
            let prompt = fill_conversation_prompt(conv, facet, config.history_budget)?;
            let v = ask_parsed(chat, prompt, JSON_REPROMPT, |r| {
                extract_json_object(r).and_then(|v| conform(&schema, &v, ""))
            })?;
            FacetPayload::Structured(v)
        }
    };
    Ok(FacetDescription {
        conversation_id: conv.id.clone(),
        facet,
        payload,
    })
}

/// Describes `conv` along every facet in `facets`, in order.
pub fn describe_conversation(
    conv: &Conversation,
    facets: &BTreeSet<FacetId>,
    chat: &dyn ChatModel,
    config: &FacetConfig,
) -> Result<Vec<FacetDescription>> {
    facets
        .iter()
        .map(|&f| describe_facet(conv, f, chat, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRepresentation {
    pub conversation_id: String,
    pub facet_subset: Vec<FacetId>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

fn render_structured(v: &Value, indent: usize, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for (k, sub) in map {
            let pad = "  ".repeat(indent);
            match sub {
                Value::Object(_) => {
                    out.push(format!("{pad}{k}:"));
                    render_structured(sub, indent + 1, out);
                }
                other => out.push(format!("{pad}{k}: {}", leaf_text(other).unwrap_or_default())),
            }
        }
    }
}

fn render_payload(p: &FacetPayload) -> Vec<String> {
    let mut lines = Vec::new();
    match p {
        FacetPayload::Structured(v) => render_structured(v, 0, &mut lines),
        FacetPayload::Sentences(s) => {
            lines.extend(s.iter().enumerate().map(|(i, t)| format!("turn {}: {t}", i + 1)))
        }
        FacetPayload::Acts(a) => lines.extend(a.iter().enumerate().map(|(i, acts)| {
            let names: Vec<&str> = acts.iter().map(SgdAct::as_str).collect();
            format!("turn {}: {}", i + 1, names.join(", "))
        })),
    }
    lines
}

/// Concatenates the descriptions of the facets in `subset`, in facet order,
/// each under its header. Descriptions outside the subset are ignored.
pub fn assemble_representation(
    descs: &[FacetDescription],
    subset: &BTreeSet<FacetId>,
) -> Result<BehaviorRepresentation> {
    if subset.is_empty() {
        return Err(Error::invalid("facet subset is empty"));
    }
    let conversation_id = descs
        .iter()
        .find(|d| subset.contains(&d.facet))
        .map(|d| d.conversation_id.clone())
        .ok_or_else(|| Error::invalid("no description for the requested facets"))?;
    let mut sections = Vec::with_capacity(subset.len());
    for facet in subset {
        let d = descs
            .iter()
            .find(|d| d.facet == *facet)
            .ok_or_else(|| Error::invalid(format!("conversation {conversation_id}: missing facet {facet}")))?;
        if d.conversation_id != conversation_id {
            return Err(Error::invalid("descriptions belong to different conversations"));
        }
        let mut lines = vec![facet.header().to_string()];
        lines.extend(render_payload(&d.payload));
        sections.push(lines.join("\n"));
    }
    Ok(BehaviorRepresentation {
        conversation_id,
        facet_subset: subset.iter().copied().collect(),
        text: sections.join("\n\n"),
        embedding: None,
    })
}
