use std::collections::HashMap;

use crate::error::{Error, Result};

pub const REQUESTS: &str = include_str!("../../assets/prompts/requests.txt");
pub const RESPONSES: &str = include_str!("../../assets/prompts/responses.txt");
pub const CONTEXT: &str = include_str!("../../assets/prompts/context.txt");
pub const COMMUNICATION_STYLE: &str = include_str!("../../assets/prompts/communication_style.txt");
pub const DAMSL: &str = include_str!("../../assets/prompts/damsl.txt");
pub const SGD: &str = include_str!("../../assets/prompts/sgd.txt");
pub const GOAL_CLASSIFICATION: &str = include_str!("../../assets/prompts/goal_classification.txt");

/// Fills `{name}` placeholders; `{{` and `}}` are literal braces. Unknown or
/// unterminated placeholders are errors, unused variables are not.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let vars: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(Error::invalid("template has an unmatched '}'"));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| Error::invalid("template has an unterminated placeholder"))?;
            let name = &tail[1..end];
            let value = vars
                .get(name)
                .ok_or_else(|| Error::invalid(format!("template placeholder {{{name}}} has no value")))?;
            out.push_str(value);
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// The JSON output skeleton at the end of a conversation-level template.
pub fn skeleton(template: &str) -> Result<serde_json::Value> {
    let filled = fill(template, &[("user_goal", ""), ("conversation_history", "")])?;
    let marker = "Output a valid JSON object";
    let at = filled
        .rfind(marker)
        .ok_or_else(|| Error::invalid("template has no JSON output format"))?;
    let body = &filled[at..];
    let (a, b) = body
        .find('{')
        .zip(body.rfind('}'))
        .ok_or_else(|| Error::invalid("template has no JSON output format"))?;
    serde_json::from_str(&body[a..=b]).map_err(|e| Error::json("prompt skeleton", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubled_braces_are_literal() {
        let got = fill("{{\"a\": \"{x}\"}}", &[("x", "{y}")]).unwrap();
        assert_eq!(got, "{\"a\": \"{y}\"}");
    }

    #[test]
    fn unknown_placeholder_rejected() {
        assert!(fill("{nope}", &[]).is_err());
        assert!(fill("{open", &[]).is_err());
        assert!(fill("close}", &[]).is_err());
    }

    #[test]
    fn every_template_fills_cleanly() {
        let vars = [
            ("user_goal", "G"),
            ("conversation_history", "H"),
            ("target_user_utterance", "U"),
            ("user_intent", "I"),
        ];
        for t in [REQUESTS, RESPONSES, CONTEXT, COMMUNICATION_STYLE, DAMSL, SGD, GOAL_CLASSIFICATION] {
            let s = fill(t, &vars).unwrap();
            assert!(!s.contains("{{"));
        }
    }

    #[test]
    fn skeletons_parse() {
        let req = skeleton(REQUESTS).unwrap();
        let keys: Vec<&String> = req.as_object().unwrap().keys().collect();
        assert_eq!(
            keys,
            ["specification_and_articulation", "goal_decomposition_strategy", "relevance_to_goal"]
        );
        for t in [RESPONSES, CONTEXT, COMMUNICATION_STYLE] {
            assert!(skeleton(t).unwrap().is_object());
        }
    }
}
