//! Offline stand-ins for simulator and assistant models. A [`Population`]
//! fixes the rates of a handful of user habits; [`PersonaSimulator`] samples
//! utterances from it deterministically per (seed, goal, turn).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TERMINATION_SIGNAL;
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatModel};
use crate::hashing::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    /// Probability the first utterance opens with a greeting.
    pub greeting: f64,
    /// Probability a follow-up utterance thanks the assistant.
    pub thanks: f64,
    /// Probability an utterance is phrased as a question.
    pub question: f64,
    /// Probability a follow-up utterance rejects the previous answer.
    pub correction: f64,
    /// Probability an utterance carries personal context.
    pub context: f64,
    /// Mean number of extra detail words per utterance.
    pub detail_words: f64,
    /// Mean number of user turns.
    pub mean_turns: f64,
    /// Probability an utterance starts in lowercase.
    pub lowercase: f64,
}

impl Population {
    /// Greets, thanks, asks questions, explains itself at length.
    pub fn polite() -> Self {
        Population {
            name: "polite".into(),
            greeting: 0.8,
            thanks: 0.7,
            question: 0.7,
            correction: 0.05,
            context: 0.7,
            detail_words: 30.0,
            mean_turns: 2.0,
            lowercase: 0.05,
        }
    }

    /// Short lowercase directives, frequent corrections, many turns.
    pub fn terse() -> Self {
        Population {
            name: "terse".into(),
            greeting: 0.02,
            thanks: 0.05,
            question: 0.1,
            correction: 0.5,
            context: 0.05,
            detail_words: 2.0,
            mean_turns: 4.0,
            lowercase: 0.9,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "polite" => Ok(Self::polite()),
            "terse" => Ok(Self::terse()),
            other => Err(Error::invalid(format!("unknown population {other:?}"))),
        }
    }
}

const DETAIL: &[&str] = &[
    "output", "format", "example", "input", "result", "version", "section", "part", "length",
    "style", "detail", "structure", "list", "step", "case", "value", "name", "order", "size",
    "limit",
];
const CONTEXT: &[&str] = &[
    "I'm working on this for my job and",
    "I tried doing it myself but",
    "my team needs this by tomorrow and",
    "I am new to this so",
    "because my last attempt failed,",
];
const FOLLOW_UPS: &[&str] = &[
    "now make it shorter",
    "add more detail to the second part",
    "change the format",
    "also handle the edge case",
    "use a different approach for the end",
    "make it more formal",
];
const CORRECTIONS: &[&str] = &[
    "no, that's wrong",
    "not what I asked",
    "that doesn't work",
    "still wrong",
];

fn seed_of(parts: &[&str]) -> u64 {
    let h = sha256_hex(parts.join("\u{1f}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn goal_of(system: &str) -> &str {
    system
        .split("# User Goal\n")
        .nth(1)
        .and_then(|r| r.split("\n\n#").next())
        .unwrap_or(system)
        .trim()
}

/// Simulated user drawn from a [`Population`]. Replies depend only on the
/// seed, the goal in the system prompt, and how many turns it has taken.
#[derive(Debug, Clone)]
pub struct PersonaSimulator {
    pub population: Population,
    pub seed: u64,
}

impl PersonaSimulator {
    pub fn new(population: Population, seed: u64) -> Self {
        PersonaSimulator { population, seed }
    }

    fn rng(&self, goal: &str, tag: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed_of(&[&self.seed.to_string(), &self.population.name, goal, tag]))
    }

    fn turn_budget(&self, goal: &str) -> usize {
        let mut rng = self.rng(goal, "turns");
        // geometric number of turns with the population's mean, at least one
        let p = 1.0 / self.population.mean_turns.max(1.0);
        let mut n = 1;
        while n < 50 && !rng.random_bool(p) {
            n += 1;
        }
        n
    }

    fn utterance(&self, goal: &str, turn: usize) -> String {
        let pop = &self.population;
        let mut rng = self.rng(goal, &turn.to_string());
        let mut parts: Vec<String> = Vec::new();
        if turn == 0 {
            if rng.random_bool(pop.greeting) {
                parts.push(["hi,", "hello!", "hey there,"].choose(&mut rng).unwrap().to_string());
            }
        } else if rng.random_bool(pop.thanks) {
            parts.push(["thanks!", "thank you,", "great, thanks."].choose(&mut rng).unwrap().to_string());
        }
        if rng.random_bool(pop.context) {
            parts.push(CONTEXT.choose(&mut rng).unwrap().to_string());
        }
        let ask = rng.random_bool(pop.question);
        let body = if turn == 0 {
            let g = goal.trim_end_matches('.').to_lowercase();
            if ask {
                format!("can you help me {g}?")
            } else {
                g
            }
        } else if rng.random_bool(pop.correction) {
            CORRECTIONS.choose(&mut rng).unwrap().to_string()
        } else {
            let f = FOLLOW_UPS.choose(&mut rng).unwrap();
            if ask {
                format!("could you {f}?")
            } else {
                f.to_string()
            }
        };
        parts.push(body);
        let extra = rng.random_range(0.0..=2.0 * pop.detail_words).round() as usize;
        if extra > 0 {
            let words: Vec<&str> = (0..extra).map(|_| *DETAIL.choose(&mut rng).unwrap()).collect();
            parts.push(format!("details: {}", words.join(" ")));
        }
        let mut s = parts.join(" ");
        if !rng.random_bool(pop.lowercase) {
            let mut c = s.chars();
            if let Some(f) = c.next() {
                s = f.to_uppercase().chain(c).collect();
            }
        }
        s
    }
}

impl ChatModel for PersonaSimulator {
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        let goal = goal_of(system);
        // the simulator's own earlier utterances arrive as assistant messages
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        if turn >= self.turn_budget(goal) {
            return Ok(TERMINATION_SIGNAL.to_string());
        }
        Ok(self.utterance(goal, turn))
    }
}

/// Assistant stub that acknowledges the latest request.
#[derive(Debug, Clone, Default)]
pub struct CannedAssistant;

impl ChatModel for CannedAssistant {
    fn chat(&self, _system: &str, messages: &[ChatMessage]) -> Result<String> {
        let last = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| Error::invalid("no user message"))?;
        let head: Vec<&str> = last.content.split_whitespace().take(8).collect();
        Ok(format!(
            "Here is a response to your request \"{}\". Let me know if you need changes.",
            head.join(" ")
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, well_formed, Assistant, GenerationConfig, GoalSpec, Simulator};
    use std::sync::Arc;

    fn goals(n: usize) -> Vec<GoalSpec> {
        (0..n)
            .map(|i| GoalSpec {
                id: format!("g{i:04}"),
                goal: format!("Write a short report about topic {i}."),
                task: crate::corpus::Task::Writing,
            })
            .collect()
    }

    #[test]
    fn persona_dialogues_are_well_formed_and_reproducible() {
        let sim = Simulator::new("terse", Arc::new(PersonaSimulator::new(Population::terse(), 1)));
        let asst = Assistant::new(Arc::new(CannedAssistant));
        let cfg = GenerationConfig::default();
        let a = generate("t", &goals(40), &sim, &asst, &cfg).unwrap();
        let b = generate("t", &goals(40), &sim, &asst, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.corpus.len(), 40);
        for c in a.corpus.conversations() {
            assert!(well_formed(&c.turns));
            assert!(c.turns.iter().all(|t| !t.content.contains(TERMINATION_SIGNAL)));
        }
    }

    #[test]
    fn populations_differ_in_length_and_turns() {
        let asst = Assistant::new(Arc::new(CannedAssistant));
        let stats = |p: Population| {
            let sim = Simulator::new(&p.name.clone(), Arc::new(PersonaSimulator::new(p, 5)));
            let out = generate("x", &goals(200), &sim, &asst, &GenerationConfig::default()).unwrap();
            let convs = out.corpus.conversations();
            let turns: usize = convs.iter().map(|c| c.user_turn_count()).sum();
            let words: usize = convs
                .iter()
                .flat_map(|c| c.user_utterances())
                .map(|u| u.split_whitespace().count())
                .sum();
            (turns as f64 / convs.len() as f64, words as f64 / turns as f64)
        };
        let (pt, pw) = stats(Population::polite());
        let (tt, tw) = stats(Population::terse());
        assert!(tt > pt + 1.0, "{tt} vs {pt}");
        assert!(pw > tw + 10.0, "{pw} vs {tw}");
    }
}
