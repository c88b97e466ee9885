//! Conversations, corpora and their on-disk forms.
//!
//! A corpus file is JSONL with one conversation object per line:
//!
//! ```json
//! {"id":"c1","source":"wildchat","task":"coding","goal":"...","turns":[{"role":"user","content":"..."}]}
//! ```

mod manifest;
mod matching;
mod matrix_file;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{ArtifactRecord, Manifest, StageRecord};
pub use matching::match_real_pairs;
pub use matrix_file::{ids_path, read_matrix, write_matrix, MatrixFile, MATRIX_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub fn flipped(self) -> Role {
        match self {
            Role::User => Role::Assistant,
            Role::Assistant => Role::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Coding,
    Writing,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub goal: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn user_utterances(&self) -> impl Iterator<Item = &str> + '_ {
        self.turns
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }

    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    /// Checks the structural invariants without modifying anything.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id must be non-empty".into());
        }
        let Some(first) = self.turns.first() else {
            return Err("conversation has no turns".into());
        };
        if first.role != Role::User {
            return Err("first turn must be user".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.content.trim().is_empty() {
                return Err(format!("turn {} has empty content", i + 1));
            }
            if i > 0 && self.turns[i - 1].role == t.role {
                return Err(format!(
                    "turns {} and {} are both {}; roles must alternate",
                    i,
                    i + 1,
                    t.role.as_str()
                ));
            }
        }
        Ok(())
    }

    /// Merges runs of consecutive same-role turns, joining their contents with a
    /// newline. Returns the number of merges performed.
    pub fn merge_repeated_roles(&mut self) -> usize {
        let mut merged: Vec<Turn> = Vec::with_capacity(self.turns.len());
        let mut merges = 0;
        for t in self.turns.drain(..) {
            match merged.last_mut() {
                Some(prev) if prev.role == t.role => {
                    prev.content.push('\n');
                    prev.content.push_str(&t.content);
                    merges += 1;
                }
                _ => merged.push(t),
            }
        }
        self.turns = merged;
        merges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Real,
    Simulated,
}

/// How to treat consecutive turns by the same speaker when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolePolicy {
    /// Merge them with a newline separator and log the repair.
    #[default]
    Merge,
    /// Reject the conversation.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    kind: CorpusKind,
    conversations: Vec<Conversation>,
}

impl Corpus {
    /// Validates every conversation and id uniqueness.
    pub fn new(
        name: impl Into<String>,
        kind: CorpusKind,
        conversations: Vec<Conversation>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(conversations.len());
        for c in &conversations {
            c.validate().map_err(|reason| Error::Conversation {
                line: None,
                id: Some(c.id.clone()),
                reason,
            })?;
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Conversation {
                    line: None,
                    id: Some(c.id.clone()),
                    reason: "duplicate id".into(),
                });
            }
        }
        Ok(Corpus {
            name: name.into(),
            kind,
            conversations,
        })
    }

    pub fn kind(&self) -> CorpusKind {
        self.kind
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.conversations.iter().map(|c| c.id.clone()).collect()
    }

    /// Keeps only the conversations whose id passes `keep`, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&Conversation) -> bool) -> Corpus {
        Corpus {
            name: self.name.clone(),
            kind: self.kind,
            conversations: self
                .conversations
                .iter()
                .filter(|c| keep(c))
                .cloned()
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for c in &self.conversations {
            let line = serde_json::to_string(c).map_err(|e| Error::json("serialize", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a JSONL corpus, merging repeated-speaker turns.
pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus> {
    load_corpus_with(path, kind, RolePolicy::Merge)
}

pub fn load_corpus_with(path: &Path, kind: CorpusKind, policy: RolePolicy) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut conversations = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut conv: Conversation =
            serde_json::from_str(&line).map_err(|e| Error::Conversation {
                line: Some(lineno),
                id: None,
                reason: format!("malformed JSON: {e}"),
            })?;
        if policy == RolePolicy::Merge && conv.turns.first().map(|t| t.role) == Some(Role::User) {
            let merges = conv.merge_repeated_roles();
            if merges > 0 {
                log::warn!(
                    "{}:{lineno}: merged {merges} repeated-speaker turn(s) in conversation {:?}",
                    path.display(),
                    conv.id
                );
            }
        }
        conv.validate().map_err(|reason| Error::Conversation {
            line: Some(lineno),
            id: Some(conv.id.clone()),
            reason,
        })?;
        if !seen.insert(conv.id.clone()) {
            return Err(Error::Conversation {
                line: Some(lineno),
                id: Some(conv.id.clone()),
                reason: "duplicate id".into(),
            });
        }
        conversations.push(conv);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Corpus {
        name,
        kind,
        conversations,
    })
}
