//! Goal-conditioned conversation generation: a user simulator and an
//! assistant take turns until the simulator emits the termination signal or
//! the turn cap is reached. Mixtures draw one simulator per goal.

mod synthetic;

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, CorpusKind, Role, Task, Turn};
use crate::error::{Error, Result};
use crate::facets::prompts;
use crate::gateway::{parallel_map, ChatMessage, ChatModel};

pub use synthetic::{CannedAssistant, PersonaSimulator, Population};

pub const TERMINATION_SIGNAL: &str = "<|TERMINATE_CONVERSATION|>";
pub const SIMULATOR_TEMPLATE: &str = include_str!("../../assets/prompts/simulator.txt");
pub const ASSISTANT_PROMPT: &str = include_str!("../../assets/prompts/assistant.txt");
pub const DEFAULT_MAX_TURNS: usize = 10;
pub const SIMULATOR_TEMPERATURE: f64 = 1.0;
pub const ASSISTANT_TEMPERATURE: f64 = 0.7;

/// Sent as the first message of the simulator's own session, which would
/// otherwise be empty.
pub const KICKOFF: &str = "Start the conversation.";

/// A user simulator: a chat model driven by a goal-conditioned system prompt.
#[derive(Clone)]
pub struct Simulator {
    pub name: String,
    /// Must contain `{intent}` and `{termination_signal}`.
    pub system_template: String,
    pub termination_signal: String,
    pub model: Arc<dyn ChatModel>,
}

impl Simulator {
    pub fn new(name: impl Into<String>, model: Arc<dyn ChatModel>) -> Self {
        Simulator {
            name: name.into(),
            system_template: SIMULATOR_TEMPLATE.into(),
            termination_signal: TERMINATION_SIGNAL.into(),
            model,
        }
    }

    pub fn system_prompt(&self, goal: &str) -> Result<String> {
        for p in ["{intent}", "{termination_signal}"] {
            if !self.system_template.contains(p) {
                return Err(Error::invalid(format!("simulator template lacks {p}")));
            }
        }
        prompts::fill(
            &self.system_template,
            &[("intent", goal), ("termination_signal", &self.termination_signal)],
        )
    }
}

#[derive(Clone)]
pub struct Assistant {
    pub system_prompt: String,
    pub model: Arc<dyn ChatModel>,
}

impl Assistant {
    pub fn new(model: Arc<dyn ChatModel>) -> Self {
        Assistant {
            system_prompt: ASSISTANT_PROMPT.trim_end().into(),
            model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub id: String,
    pub goal: String,
    #[serde(default)]
    pub task: Task,
}

impl From<&Conversation> for GoalSpec {
    fn from(c: &Conversation) -> Self {
        GoalSpec {
            id: c.id.clone(),
            goal: c.goal.clone(),
            task: c.task,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub conversation_id: String,
    pub simulator: String,
    pub goal: String,
    pub task: Task,
    pub turns: Vec<Turn>,
    /// True when the simulator emitted the termination signal.
    pub terminated: bool,
    /// Why generation stopped early; the partial transcript is kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Generated {
    pub fn to_conversation(&self) -> Conversation {
        Conversation {
            id: self.conversation_id.clone(),
            source: self.simulator.clone(),
            task: self.task,
            goal: self.goal.clone(),
            turns: self.turns.clone(),
        }
    }
}

/// Strips the signal from a simulator reply. `None` means the reply was the
/// signal (after trimming) or nothing but the signal and whitespace.
fn clean_reply(reply: &str, signal: &str) -> Option<String> {
    if reply.trim() == signal {
        return None;
    }
    let kept = reply.replace(signal, "");
    let kept = kept.trim();
    if kept.is_empty() {
        None
    } else {
        Some(kept.to_string())
    }
}

/// The simulator's view of the dialogue: its own utterances become assistant
/// messages and the assistant's become user messages.
fn flipped(turns: &[Turn]) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::user(KICKOFF)];
    out.extend(turns.iter().map(|t| ChatMessage {
        role: t.role.flipped(),
        content: t.content.clone(),
    }));
    out
}

fn as_messages(turns: &[Turn]) -> Vec<ChatMessage> {
    turns
        .iter()
        .map(|t| ChatMessage {
            role: t.role,
            content: t.content.clone(),
        })
        .collect()
}

/// Runs one simulator/assistant dialogue for `goal`. Provider failures end the
/// dialogue with `failure` set rather than returning an error.
pub fn run_conversation(
    id: &str,
    goal: &GoalSpec,
    sim: &Simulator,
    asst: &Assistant,
    max_turns: usize,
) -> Result<Generated> {
    if goal.goal.trim().is_empty() {
        return Err(Error::invalid(format!("goal {id} is empty")));
    }
    if max_turns == 0 {
        return Err(Error::invalid("max_turns must be at least 1"));
    }
    let system = sim.system_prompt(&goal.goal)?;
    let mut out = Generated {
        conversation_id: id.to_string(),
        simulator: sim.name.clone(),
        goal: goal.goal.clone(),
        task: goal.task,
        turns: Vec::new(),
        terminated: false,
        failure: None,
    };
    for _ in 0..max_turns {
        let reply = match sim.model.chat(&system, &flipped(&out.turns)) {
            Ok(r) => r,
            Err(e) => {
                out.failure = Some(format!("simulator: {e}"));
                break;
            }
        };
        let Some(utterance) = clean_reply(&reply, &sim.termination_signal) else {
            out.terminated = true;
            break;
        };
        out.turns.push(Turn::user(utterance));
        match asst.model.chat(&asst.system_prompt, &as_messages(&out.turns)) {
            Ok(r) if !r.trim().is_empty() => out.turns.push(Turn::assistant(r.trim())),
            Ok(_) => {
                out.failure = Some("assistant: empty reply".into());
                break;
            }
            Err(e) => {
                out.failure = Some(format!("assistant: {e}"));
                break;
            }
        }
    }
    if out.failure.is_none() && out.turns.is_empty() {
        out.failure = Some("simulator ended the conversation before speaking".into());
    }
    Ok(out)
}

/// Draws one simulator index per goal from `weights` with a seeded generator.
pub fn assign_simulators(n: usize, weights: &[f64], seed: u64) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("mixture weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub conversation_id: String,
    pub simulator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_turns: usize,
    /// Dialogues generated concurrently.
    pub workers: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_turns: DEFAULT_MAX_TURNS,
            workers: 8,
        }
    }
}

pub struct GenerationOutput {
    /// Successfully generated dialogues, in goal order.
    pub corpus: Corpus,
    /// Every dialogue, including failed ones with their partial transcripts.
    pub records: Vec<Generated>,
    pub assignments: Vec<Assignment>,
}

impl GenerationOutput {
    pub fn failures(&self) -> impl Iterator<Item = &Generated> {
        self.records.iter().filter(|g| g.failure.is_some())
    }
}

fn generate_assigned(
    name: &str,
    goals: &[GoalSpec],
    sims: &[&Simulator],
    picks: &[usize],
    asst: &Assistant,
    cfg: &GenerationConfig,
) -> Result<GenerationOutput> {
    let jobs: Vec<(usize, &GoalSpec)> = picks.iter().copied().zip(goals).collect();
    let records = parallel_map(&jobs, cfg.workers, |_, (s, g)| {
        run_conversation(&g.id, g, sims[*s], asst, cfg.max_turns)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let assignments = records
        .iter()
        .map(|g| Assignment {
            conversation_id: g.conversation_id.clone(),
            simulator: g.simulator.clone(),
        })
        .collect();
    let ok: Vec<Conversation> = records
        .iter()
        .filter(|g| g.failure.is_none())
        .map(Generated::to_conversation)
        .collect();
    for g in records.iter().filter(|g| g.failure.is_some()) {
        log::warn!("conversation {} failed: {}", g.conversation_id, g.failure.as_deref().unwrap_or(""));
    }
    Ok(GenerationOutput {
        corpus: Corpus::new(name, CorpusKind::Simulated, ok)?,
        records,
        assignments,
    })
}

/// Generates one dialogue per goal with a single simulator.
pub fn generate(
    name: &str,
    goals: &[GoalSpec],
    sim: &Simulator,
    asst: &Assistant,
    cfg: &GenerationConfig,
) -> Result<GenerationOutput> {
    generate_assigned(name, goals, &[sim], &vec![0; goals.len()], asst, cfg)
}

/// Generates one dialogue per goal, drawing its simulator from the weighted
/// mixture. The same seed always yields the same assignment.
pub fn run_mixture(
    name: &str,
    goals: &[GoalSpec],
    sims: &[(Simulator, f64)],
    asst: &Assistant,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<GenerationOutput> {
    if sims.len() < 2 {
        return Err(Error::invalid("a mixture needs at least two simulators"));
    }
    let weights: Vec<f64> = sims.iter().map(|(_, w)| *w).collect();
    let picks = assign_simulators(goals.len(), &weights, seed)?;
    let refs: Vec<&Simulator> = sims.iter().map(|(s, _)| s).collect();
    generate_assigned(name, goals, &refs, &picks, asst, cfg)
}

/// True when `turns` alternate starting with the user.
pub fn well_formed(turns: &[Turn]) -> bool {
    turns.first().is_some_and(|t| t.role == Role::User)
        && turns.windows(2).all(|w| w[0].role != w[1].role)
}
