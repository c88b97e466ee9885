//! Rule-based offline annotator. It answers the facet, goal-classification and
//! term-filter prompts from surface features of the user utterances, so the
//! whole pipeline runs without a model service. Descriptions are coarse but
//! deterministic and sensitive to style differences between corpora.

use std::collections::BTreeSet;

use serde_json::Value;

use super::SgdAct;
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatModel};

#[derive(Debug, Clone, Default)]
pub struct HeuristicAnnotator;

impl HeuristicAnnotator {
    pub fn new() -> Self {
        HeuristicAnnotator
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let a = text.find(start)? + start.len();
    let rest = &text[a..];
    Some(&rest[..rest.find(end).unwrap_or(rest.len())])
}

/// User utterances from a rendered history.
fn user_utterances(history: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in history.lines() {
        if let Some(rest) = line.strip_prefix("User: ") {
            out.extend(current.take());
            current = Some(rest.to_string());
        } else if line.starts_with("Assistant: ") {
            out.extend(current.take());
        } else if let Some(c) = current.as_mut() {
            c.push('\n');
            c.push_str(line);
        }
    }
    out.extend(current);
    out.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn starts_with_any(s: &str, prefixes: &[&str]) -> bool {
    let w = words(s);
    prefixes.iter().any(|p| {
        let pw: Vec<&str> = p.split(' ').collect();
        w.len() >= pw.len() && w.iter().zip(&pw).all(|(a, b)| a == b)
    })
}

fn contains_any(s: &str, needles: &[&str]) -> bool {
    let l = s.to_lowercase();
    needles.iter().any(|n| l.contains(n))
}

const GREETINGS: &[&str] = &["hi", "hello", "hey", "good morning", "good evening", "greetings", "dear"];
const THANKS: &[&str] = &["thank", "thx", "appreciate", "grateful"];
const FAREWELLS: &[&str] = &["bye", "goodbye", "see you", "that's all", "that is all"];
const NEGATIONS: &[&str] = &["no", "nope", "not", "wrong", "that's wrong", "doesn't", "does not", "didn't", "still"];
const AFFIRMATIONS: &[&str] = &["yes", "yeah", "ok", "okay", "great", "perfect", "sure", "good", "nice", "awesome"];
const ALTERNATIVES: &[&str] = &["another", "alternative", "different", "other way", "other option", "instead"];
const CONTEXT_CUES: &[&str] = &["i'm", "i am", "my ", "i tried", "i have", "because", "i need", "we ", "our "];
const QUESTION_WORDS: &[&str] = &["what", "why", "how", "can", "could", "would", "is", "are", "do", "does", "which", "where", "when"];

#[derive(Debug, Clone, Default)]
struct Features {
    turns: usize,
    mean_words: f64,
    greeting: bool,
    thanks: bool,
    farewell: bool,
    question_share: f64,
    correction_share: f64,
    context_share: f64,
    formatted: bool,
    exclaims: bool,
    lowercase_share: f64,
}

impl Features {
    fn of(utts: &[String]) -> Self {
        let n = utts.len().max(1) as f64;
        let share = |f: &dyn Fn(&String) -> bool| utts.iter().filter(|u| f(u)).count() as f64 / n;
        Features {
            turns: utts.len(),
            mean_words: utts.iter().map(|u| words(u).len()).sum::<usize>() as f64 / n,
            greeting: utts.iter().any(|u| starts_with_any(u, GREETINGS)),
            thanks: utts.iter().any(|u| contains_any(u, THANKS)),
            farewell: utts.iter().any(|u| contains_any(u, FAREWELLS)),
            question_share: share(&|u| u.contains('?') || starts_with_any(u, QUESTION_WORDS)),
            correction_share: share(&|u| starts_with_any(u, NEGATIONS) || contains_any(u, &["wrong", "error", "doesn't work", "not what"])),
            context_share: share(&|u| contains_any(u, CONTEXT_CUES)),
            formatted: utts.iter().any(|u| u.contains("```") || u.lines().any(|l| l.trim_start().starts_with("- ") || l.trim_start().starts_with("1."))),
            exclaims: utts.iter().any(|u| u.contains('!')),
            lowercase_share: share(&|u| u.chars().next().is_some_and(|c| c.is_lowercase())),
        }
    }

    fn verbosity(&self) -> &'static str {
        match self.mean_words {
            w if w < 8.0 => "minimal, compressed, terse fragments",
            w if w < 25.0 => "moderately brief messages",
            _ => "expansive, elaborated messages",
        }
    }

    fn specification(&self) -> &'static str {
        match self.mean_words {
            w if w < 8.0 => "underspecified requests, constraints and output format omitted",
            w if w < 25.0 => "partially specified, key constraints given, edge cases left open",
            _ => "exhaustively specified, constraints and expected output stated upfront",
        }
    }

    fn decomposition(&self) -> &'static str {
        match self.turns {
            0 | 1 => "single-shot, entire goal in one utterance",
            2 | 3 => "top-down, goal stated first then refined",
            _ => "chained, each request builds on the previous turn",
        }
    }

    fn framing(&self) -> &'static str {
        if self.question_share > 0.5 {
            "questions that implicitly request action"
        } else if self.question_share > 0.0 {
            "mix of imperative directives and questions"
        } else {
            "imperative commands, explicit directives"
        }
    }

    fn politeness(&self) -> String {
        let mut parts = Vec::new();
        if self.greeting {
            parts.push("opens with greetings");
        }
        if self.thanks {
            parts.push("expresses gratitude");
        }
        if self.farewell {
            parts.push("signs off with farewells");
        }
        if parts.is_empty() {
            "no pleasantries, purely transactional".into()
        } else {
            parts.join(", ")
        }
    }

    fn relationship(&self) -> &'static str {
        if self.greeting || self.thanks {
            "social interlocutor, rapport-building politeness"
        } else {
            "tool, transactional exchanges"
        }
    }

    fn register(&self) -> &'static str {
        match (self.greeting || self.thanks, self.lowercase_share > 0.5) {
            (true, false) => "polite, conversational register",
            (true, true) => "casual, friendly register",
            (false, true) => "casual, terse register",
            (false, false) => "neutral, professional register",
        }
    }

    fn tone(&self) -> &'static str {
        if self.correction_share > 0.3 {
            "frustrated, impatient after errors"
        } else if self.exclaims {
            "enthusiastic, positive"
        } else {
            "neutral"
        }
    }

    fn evaluation(&self) -> &'static str {
        if self.correction_share > 0.3 {
            "rejects outputs, points out errors, specific corrective feedback"
        } else if self.turns > 1 {
            "implicit acceptance by continuing, surface-level acknowledgment"
        } else {
            "no evaluation, does not engage after the first request"
        }
    }

    fn context(&self) -> &'static str {
        if self.context_share > 0.5 {
            "rich context, personal background and prior attempts"
        } else if self.context_share > 0.0 {
            "some context, situational constraints mentioned"
        } else {
            "little context, bare directives"
        }
    }

    fn formatting(&self) -> &'static str {
        if self.formatted {
            "uses formatting, lists or code blocks"
        } else {
            "plain unformatted text"
        }
    }

    fn delivery(&self) -> &'static str {
        if self.turns > 1 && self.context_share > 0.0 {
            "reveals context incrementally, volunteered unprompted"
        } else {
            "front-loads all context in the first message"
        }
    }

    /// A description for one skeleton field, chosen by its key name.
    fn describe(&self, key: &str) -> String {
        let k = key.to_lowercase();
        let has = |s: &str| k.contains(s);
        if has("politeness") || has("social") {
            self.politeness()
        } else if has("relationship") {
            self.relationship().into()
        } else if has("register") {
            self.register().into()
        } else if has("emotional") || has("tone") {
            self.tone().into()
        } else if has("verbosity") {
            self.verbosity().into()
        } else if has("formatting") {
            self.formatting().into()
        } else if has("specification") || has("underspecified") || has("completeness") {
            self.specification().into()
        } else if has("decomposition") || has("evolution") {
            self.decomposition().into()
        } else if has("articulation") || has("directness") || has("framing") {
            self.framing().into()
        } else if has("evaluation") || has("feedback") || has("engagement") || has("action") {
            self.evaluation().into()
        } else if has("reshaping") {
            if self.turns > 1 {
                "introduces new constraints across turns".into()
            } else {
                "no incremental reshaping".into()
            }
        } else if has("distribution") || has("trigger") {
            self.delivery().into()
        } else if has("context") || has("depth") {
            self.context().into()
        } else if has("adherence") || has("relevance") {
            if self.correction_share > 0.3 {
                "directly related, troubleshooting intermediate outputs".into()
            } else {
                "directly related to the goal".into()
            }
        } else {
            format!("{}; {}", self.verbosity(), self.framing())
        }
    }
}

fn fill_skeleton(v: &Value, f: &Features, key: &str) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, sub)| (k.clone(), fill_skeleton(sub, f, k)))
                .collect(),
        ),
        _ => Value::String(f.describe(key)),
    }
}

fn sgd_acts(target: &str, first: bool) -> BTreeSet<SgdAct> {
    let mut acts = BTreeSet::new();
    if starts_with_any(target, GREETINGS) {
        acts.insert(SgdAct::Greet);
    }
    if contains_any(target, THANKS) {
        acts.insert(SgdAct::Thank);
    }
    if contains_any(target, FAREWELLS) {
        acts.insert(SgdAct::Goodbye);
    }
    if starts_with_any(target, NEGATIONS) {
        acts.insert(SgdAct::Negate);
    } else if starts_with_any(target, AFFIRMATIONS) {
        acts.insert(SgdAct::Affirm);
    }
    if contains_any(target, ALTERNATIVES) {
        acts.insert(SgdAct::RequestAlts);
    }
    if target.contains('?') || starts_with_any(target, QUESTION_WORDS) {
        acts.insert(SgdAct::Request);
    }
    if first {
        acts.insert(SgdAct::InformIntent);
    } else if words(target).len() >= 6 {
        acts.insert(SgdAct::Inform);
    }
    if acts.is_empty() {
        acts.insert(SgdAct::Inform);
    }
    acts
}

fn damsl_sentence(target: &str, first: bool) -> String {
    let social = starts_with_any(target, GREETINGS) || contains_any(target, THANKS) || contains_any(target, FAREWELLS);
    let n = words(target).len();
    let level = if social && n < 6 {
        "Communication-management"
    } else if contains_any(target, &["let's", "next", "first", "step", "now"]) {
        "Task-management"
    } else {
        "Task"
    };
    let forward = if social && n < 6 {
        "conventional social act"
    } else if target.contains('?') || starts_with_any(target, QUESTION_WORDS) {
        "info-request"
    } else if n < 6 && !first {
        "statement"
    } else {
        "influencing-addressee-future-action directive"
    };
    let backward = if first {
        "no backward link"
    } else if starts_with_any(target, NEGATIONS) {
        "rejects prior output"
    } else if starts_with_any(target, AFFIRMATIONS) || contains_any(target, THANKS) {
        "accepts prior output"
    } else {
        "builds on prior turn"
    };
    format!("{level} utterance, {forward}, {backward}, {} wording.", if n < 8 { "terse" } else { "elaborated" })
}

fn classify(intent: &str) -> (&'static str, &'static str) {
    let coding = ["code", "function", "script", "program", "python", "javascript", "sql", "bug", "compile", "class", "api", "regex", "error"];
    let writing = ["write", "essay", "story", "poem", "email", "letter", "article", "blog", "rewrite", "paragraph", "draft", "summary"];
    let w = words(intent);
    let hit = |list: &[&str]| w.iter().any(|x| list.contains(&x.as_str()));
    if hit(&coding) {
        ("Artifact Creation", "Coding")
    } else if hit(&writing) {
        ("Artifact Creation", "Writing")
    } else if hit(&["explain", "what", "why", "how", "learn"]) {
        ("Information Seeking", "Other")
    } else {
        ("Other", "Other")
    }
}

impl ChatModel for HeuristicAnnotator {
    fn chat(&self, _system: &str, messages: &[ChatMessage]) -> Result<String> {
        let prompt = &messages
            .first()
            .ok_or_else(|| Error::invalid("no messages"))?
            .content;
        let target = between(prompt, "ONLY to this utterance:\n", "\n\n\n# ").map(str::trim);
        let first = prompt.contains("(start of conversation)");
        if prompt.contains("(adapted from Schema-Guided Dialogue)") {
            let target = target.ok_or_else(|| Error::invalid("no target utterance"))?;
            let acts: Vec<&str> = sgd_acts(target, first).iter().map(SgdAct::as_str).collect();
            return Ok(acts.join(", "));
        }
        if prompt.contains("Dialogue Act Markup in Several Layers") {
            let target = target.ok_or_else(|| Error::invalid("no target utterance"))?;
            return Ok(damsl_sentence(target, first));
        }
        if let Some(intent) = between(prompt, "# User Intent\n", "\n\n## Categories") {
            let (c, s) = classify(intent);
            return Ok(format!("{{\"category\": \"{c}\", \"subcategory\": \"{s}\"}}"));
        }
        if prompt.contains("Output a valid JSON object") {
            let history = between(prompt, "# Conversation\n", "\n\n# Analysis Criteria")
                .or_else(|| between(prompt, "# User Utterances\n", "\n\n# Analysis Criteria"))
                .unwrap_or("");
            let feats = Features::of(&user_utterances(history));
            let at = prompt.rfind("Output a valid JSON object").unwrap_or(0);
            let skeleton = super::extract_json_object(&prompt[at..]).map_err(Error::invalid)?;
            return Ok(fill_skeleton(&skeleton, &feats, "").to_string());
        }
        if prompt.contains("JSON array") {
            return Ok("[]".into());
        }
        Err(Error::invalid("heuristic annotator does not recognize this prompt"))
    }
}
