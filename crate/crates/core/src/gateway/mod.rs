//! Clients for chat-completion and embedding services.
//!
//! [`ProviderClient`] speaks the common `/chat/completions` and `/embeddings`
//! JSON wire format through a pluggable [`Transport`], with retries, a
//! concurrency limit and a content-addressed response cache. Everything that
//! needs a model goes through the [`ChatModel`] and [`Embedder`] traits, so the
//! offline stubs in [`stub`] can stand in for real services.

mod cache;
mod client;
pub mod stub;
mod transport;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use cache::ResponseCache;
pub use client::{ChatExchange, ProviderClient, TokenUsage};
pub use transport::{HttpRequest, HttpResponse, HttpTransport, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

pub trait ChatModel: Send + Sync {
    /// Returns the assistant reply to `messages` under the `system` prompt.
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String>;
}

pub trait Embedder: Send + Sync {
    /// One provider vector per text, in input order, at the provider's native
    /// dimension.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        (**self).chat(system, messages)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed_raw(texts)
    }
}

pub const DEFAULT_TRUNCATE_DIM: usize = 1024;

/// Embeds `texts` and keeps the first `truncate_dim` coordinates of each vector.
pub fn embed(embedder: &dyn Embedder, texts: &[String], truncate_dim: usize) -> Result<Matrix> {
    if texts.is_empty() {
        return Err(Error::invalid("nothing to embed"));
    }
    if truncate_dim == 0 {
        return Err(Error::invalid("truncate_dim must be positive"));
    }
    let raw = embedder.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::DimensionMismatch {
            expected: texts.len(),
            found: raw.len(),
        });
    }
    let mut data = Vec::with_capacity(texts.len() * truncate_dim);
    for v in &raw {
        if v.len() < truncate_dim {
            return Err(Error::DimensionMismatch {
                expected: truncate_dim,
                found: v.len(),
            });
        }
        data.extend(v[..truncate_dim].iter().map(|&x| x as f64));
    }
    Matrix::from_vec(texts.len(), truncate_dim, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoint.
    #[default]
    Http,
    /// Built-in deterministic offline provider (see [`stub`]).
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_concurrency: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub chat_path: String,
    pub embeddings_path: String,
    /// Texts per embeddings request.
    pub batch_size: usize,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    /// Vector size produced by the stub embedder.
    pub stub_dim: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Http,
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            api_key_env: None,
            max_concurrency: 8,
            timeout_secs: 120.0,
            max_retries: 5,
            temperature: 0.0,
            chat_path: "/chat/completions".into(),
            embeddings_path: "/embeddings".into(),
            batch_size: 64,
            backoff_ms: 500,
            stub_dim: 2048,
        }
    }
}

impl ProviderConfig {
    pub fn stub(model: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Stub,
            model: model.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::invalid("max_concurrency must be at least 1"));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::invalid("timeout must be positive"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::invalid("temperature must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Applies `f` to every item on up to `workers` threads and returns the
/// results in input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunks: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        out.push((i, f(i, &items[i])));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    for (i, r) in chunks.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}
