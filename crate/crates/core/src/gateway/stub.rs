//! Deterministic in-process stand-ins for chat and embedding services.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::transport::{HttpRequest, HttpResponse, Transport};
use super::{ChatMessage, ChatModel, Embedder};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;

type Handler = dyn Fn(&str, &Value) -> std::result::Result<HttpResponse, String> + Send + Sync;

/// A [`Transport`] backed by a closure over `(url, body)`. Counts requests and
/// records the peak number of concurrent calls.
pub struct StubTransport {
    handler: Box<Handler>,
    latency: Duration,
    requests: AtomicU64,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl StubTransport {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&str, &Value) -> std::result::Result<HttpResponse, String> + Send + Sync + 'static,
    {
        StubTransport {
            handler: Box::new(f),
            latency: Duration::ZERO,
            requests: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Serves the chat and embeddings wire format from local models. Requests
    /// carrying `input` are embeddings, everything else is chat.
    pub fn service(chat: Arc<dyn ChatModel>, embedder: Arc<dyn Embedder>) -> Self {
        Self::new(move |_url, body| {
            let result = if body.get("input").is_some() {
                serve_embeddings(embedder.as_ref(), body)
            } else {
                serve_chat(chat.as_ref(), body)
            };
            Ok(match result {
                Ok(v) => HttpResponse::ok(v.to_string()),
                Err(e) => HttpResponse::status(400, e.to_string()),
            })
        })
    }

    /// Chat replies echo the last message; embeddings come from [`HashEmbedder`].
    pub fn echo(dim: usize) -> Self {
        Self::service(Arc::new(EchoChat), Arc::new(HashEmbedder::new(dim)))
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// A successful chat completion body carrying `reply`.
    pub fn chat_body(reply: &str) -> HttpResponse {
        HttpResponse::ok(chat_response(reply).to_string())
    }
}

impl Transport for StubTransport {
    fn post(&self, req: &HttpRequest<'_>) -> std::result::Result<HttpResponse, String> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let out = (self.handler)(&req.url, req.body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

fn approx_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

fn chat_response(reply: &str) -> Value {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}],
        "usage": {"prompt_tokens": 0, "completion_tokens": approx_tokens(reply)},
    })
}

fn serve_chat(chat: &dyn ChatModel, body: &Value) -> Result<Value> {
    let wire = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("request has no messages"))?;
    let mut system = String::new();
    let mut messages = Vec::new();
    for m in wire {
        let role = m.get("role").and_then(Value::as_str).unwrap_or("");
        let content = m.get("content").and_then(Value::as_str).unwrap_or("").to_string();
        match role {
            "system" => system = content,
            "user" => messages.push(ChatMessage::user(content)),
            "assistant" => messages.push(ChatMessage::assistant(content)),
            other => return Err(Error::invalid(format!("unknown role {other:?}"))),
        }
    }
    let reply = chat.chat(&system, &messages)?;
    let mut v = chat_response(&reply);
    let prompt: u64 = wire
        .iter()
        .filter_map(|m| m.get("content").and_then(Value::as_str))
        .map(approx_tokens)
        .sum();
    v["usage"]["prompt_tokens"] = json!(prompt);
    Ok(v)
}

fn serve_embeddings(embedder: &dyn Embedder, body: &Value) -> Result<Value> {
    let texts: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid("input must be strings"))?,
        _ => return Err(Error::invalid("input must be a string or list")),
    };
    let vecs = embedder.embed_raw(&texts)?;
    let data: Vec<Value> = vecs
        .into_iter()
        .enumerate()
        .map(|(i, v)| json!({"object": "embedding", "index": i, "embedding": v}))
        .collect();
    let tokens: u64 = texts.iter().map(|t| approx_tokens(t)).sum();
    Ok(json!({"data": data, "usage": {"prompt_tokens": tokens}}))
}

/// Replies with the content of the last message.
pub struct EchoChat;

impl ChatModel for EchoChat {
    fn chat(&self, _system: &str, messages: &[ChatMessage]) -> Result<String> {
        messages
            .last()
            .map(|m| m.content.clone())
            .ok_or_else(|| Error::invalid("no messages"))
    }
}

/// Replays a fixed list of replies in order, then fails.
pub struct ScriptedChat {
    replies: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChat {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatModel for ScriptedChat {
    fn chat(&self, _system: &str, _messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::Provider {
                status: 500,
                message: "script exhausted".into(),
            })
    }
}

/// Chat model defined by a closure.
pub struct FnChat<F>(pub F);

impl<F> ChatModel for FnChat<F>
where
    F: Fn(&str, &[ChatMessage]) -> Result<String> + Send + Sync,
{
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        (self.0)(system, messages)
    }
}

fn text_seed(text: &str) -> u64 {
    let h = sha256_hex(text.as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / n) as f32;
        }
    }
    v
}

/// Maps every distinct text to an unrelated pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        HashEmbedder { dim }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed(text));
        unit((0..self.dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect())
    }
}

impl Embedder for HashEmbedder {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Bag-of-words feature hashing: texts sharing words get similar vectors.
/// Each lowercase alphanumeric token adds a signed unit to one coordinate in
/// every block of 32, so any prefix of the vector is itself a usable
/// embedding.
#[derive(Debug, Clone)]
pub struct TokenHashEmbedder {
    dim: usize,
}

const BLOCK: usize = 32;

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TokenHashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        TokenHashEmbedder { dim }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let mut any = false;
        for tok in text
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty())
        {
            let mut s = text_seed(&tok.to_lowercase());
            for start in (0..self.dim).step_by(BLOCK) {
                let width = BLOCK.min(self.dim - start);
                s = splitmix(s);
                v[start + (s % width as u64) as usize] += if (s >> 63) == 0 { 1.0 } else { -1.0 };
            }
            any = true;
        }
        if !any || v.iter().all(|x| *x == 0.0) {
            return HashEmbedder::new(self.dim).vector(text);
        }
        unit(v)
    }
}

impl Embedder for TokenHashEmbedder {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic_unit_norm() {
        let e = HashEmbedder::new(64);
        let a = e.embed_raw(&["x".into(), "x".into(), "y".into()]).unwrap();
        assert_eq!(a[0], a[1]);
        assert_ne!(a[0], a[2]);
        let n: f64 = a[2].iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn token_hash_similarity_tracks_shared_words() {
        let e = TokenHashEmbedder::new(256);
        let v = e
            .embed_raw(&[
                "fix the python bug".into(),
                "fix this python bug please".into(),
                "write a sonnet about autumn".into(),
                "".into(),
            ])
            .unwrap();
        let cos = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>();
        assert!(cos(&v[0], &v[1]) > cos(&v[0], &v[2]) + 0.3);
        assert!(v[3].iter().any(|x| *x != 0.0));
    }

    #[test]
    fn scripted_chat_runs_out() {
        let c = ScriptedChat::new(["a", "b"]);
        let m = [ChatMessage::user("q")];
        assert_eq!(c.chat("", &m).unwrap(), "a");
        assert_eq!(c.chat("", &m).unwrap(), "b");
        assert!(c.chat("", &m).is_err());
        assert_eq!(c.calls(), 3);
    }
}
