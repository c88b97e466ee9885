use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::ResponseCache;
use super::transport::{HttpRequest, HttpResponse, HttpTransport, Transport};
use super::{parallel_map, ChatMessage, ChatModel, Embedder, ProviderConfig};
use crate::error::{Error, Result};
use crate::hashing::json_hash;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One chat call as sent and received. `reply` is `Some` exactly when the call
/// succeeded; `error` carries the failure otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub reply: Option<String>,
    pub error: Option<String>,
    pub usage: TokenUsage,
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct ProviderClient {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    cache: Arc<ResponseCache>,
    limiter: Semaphore,
    api_key: Option<String>,
    offline: bool,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    requests: AtomicU64,
}

impl ProviderClient {
    pub fn new(
        config: ProviderConfig,
        transport: Arc<dyn Transport>,
        cache: Arc<ResponseCache>,
    ) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::invalid(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(ProviderClient {
            limiter: Semaphore::new(config.max_concurrency),
            config,
            transport,
            cache,
            api_key,
            offline: false,
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        })
    }

    pub fn http(config: ProviderConfig, cache: Arc<ResponseCache>) -> Result<Self> {
        let transport = HttpTransport::new().map_err(Error::Transport)?;
        Self::new(config, Arc::new(transport), cache)
    }

    /// Serve from the cache only; any miss is an error and the transport is
    /// never touched.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }

    /// Number of requests handed to the transport, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post_with_retries(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.transport.post(&HttpRequest {
                    url: url.clone(),
                    body,
                    api_key: self.api_key.as_deref(),
                    timeout,
                })
            };
            match outcome {
                Ok(HttpResponse { status, body }) if (200..300).contains(&status) => {
                    return serde_json::from_str(&body).map_err(|e| Error::Provider {
                        status,
                        message: format!("undecodable response body: {e}"),
                    });
                }
                Ok(HttpResponse { status, body }) if is_retryable(status) => {
                    log::debug!("{url}: status {status}, attempt {}", attempt + 1);
                    last = format!("status {status}: {}", truncate(&body, 200));
                }
                Ok(HttpResponse { status, body }) => {
                    return Err(Error::Provider {
                        status,
                        message: truncate(&body, 500).to_string(),
                    });
                }
                Err(e) => {
                    log::debug!("{url}: {e}, attempt {}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Transport(format!(
            "{url}: giving up after {} retries: {last}",
            self.config.max_retries
        )))
    }

    /// Runs one chat call and records it, successful or not.
    pub fn exchange(&self, system: &str, messages: &[ChatMessage]) -> ChatExchange {
        let before = self.usage();
        let res = self.chat(system, messages);
        let after = self.usage();
        let usage = TokenUsage {
            prompt_tokens: after.prompt_tokens - before.prompt_tokens,
            completion_tokens: after.completion_tokens - before.completion_tokens,
        };
        let (reply, error) = match res {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        ChatExchange {
            system: system.to_string(),
            messages: messages.to_vec(),
            reply,
            error,
            usage,
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = json!({ "model": self.config.model, "input": texts });
        let resp = self.post_with_retries(&self.config.embeddings_path, &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| bad_body("embeddings response has no data array"))?;
        if data.len() != texts.len() {
            return Err(bad_body(&format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| bad_body("embedding entry without vector"))?
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| bad_body("non-numeric embedding value"))?;
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| bad_body("embedding index out of range"))?;
            *slot = Some(vec);
        }
        if let Some(usage) = resp.get("usage") {
            let p = usage.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0);
            self.prompt_tokens.fetch_add(p, Ordering::Relaxed);
        }
        out.into_iter()
            .map(|v| v.ok_or_else(|| bad_body("missing embedding index")))
            .collect()
    }
}

impl ChatModel for ProviderClient {
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        if messages.is_empty() {
            return Err(Error::invalid("chat requires at least one message"));
        }
        let mut wire = Vec::with_capacity(messages.len() + 1);
        if !system.is_empty() {
            wire.push(json!({"role": "system", "content": system}));
        }
        for m in messages {
            wire.push(json!({"role": m.role.as_str(), "content": m.content}));
        }
        let cacheable = self.config.temperature == 0.0;
        let key = json_hash(&json!({
            "kind": "chat",
            "model": self.config.model,
            "system": system,
            "messages": messages,
            "temperature": self.config.temperature,
        }));
        if cacheable {
            if let Some(Value::String(s)) = self.cache.get(&key) {
                return Ok(s);
            }
        }
        if self.offline {
            return Err(Error::CacheMiss(key));
        }
        let body = json!({
            "model": self.config.model,
            "messages": wire,
            "temperature": self.config.temperature,
        });
        let resp = self.post_with_retries(&self.config.chat_path, &body)?;
        let reply = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| bad_body("chat response has no choices[0].message.content"))?
            .to_string();
        if let Some(usage) = resp.get("usage") {
            let p = usage.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0);
            let c = usage
                .get("completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0);
            self.prompt_tokens.fetch_add(p, Ordering::Relaxed);
            self.completion_tokens.fetch_add(c, Ordering::Relaxed);
        }
        if cacheable {
            self.cache.put(&key, &Value::String(reply.clone()));
        }
        Ok(reply)
    }
}

impl Embedder for ProviderClient {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let keys: Vec<String> = texts
            .iter()
            .map(|t| json_hash(&json!({"kind": "embedding", "model": self.config.model, "input": t})))
            .collect();
        let mut out: Vec<Option<Vec<f32>>> = keys
            .iter()
            .map(|k| {
                self.cache
                    .get(k)
                    .and_then(|v| serde_json::from_value::<Vec<f32>>(v).ok())
            })
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            if self.offline {
                return Err(Error::CacheMiss(keys[missing[0]].clone()));
            }
            let batches: Vec<&[usize]> = missing.chunks(self.config.batch_size).collect();
            let results = parallel_map(&batches, self.config.max_concurrency, |_, idx| {
                let batch: Vec<String> = idx.iter().map(|&i| texts[i].clone()).collect();
                self.embed_batch(&batch)
            });
            for (idx, res) in batches.iter().zip(results) {
                for (&i, v) in idx.iter().zip(res?) {
                    self.cache.put(&keys[i], &json!(v));
                    out[i] = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

fn is_retryable(status: u16) -> bool {
    matches!(status, 408 | 409 | 425 | 429) || status >= 500
}

fn bad_body(msg: &str) -> Error {
    Error::Provider {
        status: 200,
        message: msg.to_string(),
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::super::stub::{HashEmbedder, StubTransport};
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn cfg() -> ProviderConfig {
        ProviderConfig {
            model: "m".into(),
            backoff_ms: 1,
            max_retries: 3,
            ..Default::default()
        }
    }

    fn client(t: Arc<StubTransport>, c: ProviderConfig) -> ProviderClient {
        ProviderClient::new(c, t, Arc::new(ResponseCache::in_memory())).unwrap()
    }

    #[test]
    fn echo_stub_round_trip() {
        let t = Arc::new(StubTransport::echo(8));
        let c = client(t.clone(), cfg());
        assert_eq!(c.chat("s", &[ChatMessage::user("hi")]).unwrap(), "hi");
        assert_eq!(t.request_count(), 1);
        assert!(c.usage().completion_tokens > 0);
    }

    #[test]
    fn retries_429_then_succeeds() {
        let calls = AtomicUsize::new(0);
        let t = Arc::new(StubTransport::new(move |_path, _body| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Ok(HttpResponse::status(429, "slow down"))
            } else {
                Ok(StubTransport::chat_body("done"))
            }
        }));
        let c = client(t.clone(), cfg());
        assert_eq!(c.chat("", &[ChatMessage::user("x")]).unwrap(), "done");
        assert_eq!(t.request_count(), 3);
    }

    #[test]
    fn exhausted_retries_are_a_transport_error() {
        let t = Arc::new(StubTransport::new(|_, _| Err("connection refused".into())));
        let c = client(t.clone(), cfg());
        let err = c.chat("", &[ChatMessage::user("x")]).unwrap_err();
        assert!(matches!(err, Error::Transport(_)), "{err}");
        assert_eq!(t.request_count(), 4);
    }

    #[test]
    fn non_retryable_status_is_a_provider_error() {
        let t = Arc::new(StubTransport::new(|_, _| Ok(HttpResponse::status(401, "bad key"))));
        let c = client(t.clone(), cfg());
        let err = c.chat("", &[ChatMessage::user("x")]).unwrap_err();
        assert!(matches!(err, Error::Provider { status: 401, .. }));
        assert_eq!(t.request_count(), 1);
    }

    #[test]
    fn zero_temperature_requests_hit_the_cache() {
        let t = Arc::new(StubTransport::echo(8));
        let c = client(t.clone(), cfg());
        let msgs = [ChatMessage::user("same")];
        c.chat("sys", &msgs).unwrap();
        c.chat("sys", &msgs).unwrap();
        assert_eq!(t.request_count(), 1);

        let warm = ProviderClient::new(cfg(), t.clone(), c.cache.clone())
            .unwrap()
            .offline(true);
        assert_eq!(warm.chat("sys", &msgs).unwrap(), "same");
        assert_eq!(t.request_count(), 1);
        assert!(matches!(
            warm.chat("sys", &[ChatMessage::user("new")]),
            Err(Error::CacheMiss(_))
        ));
        assert_eq!(t.request_count(), 1);
    }

    #[test]
    fn sampled_requests_are_not_cached() {
        let t = Arc::new(StubTransport::echo(8));
        let c = client(
            t.clone(),
            ProviderConfig {
                temperature: 0.7,
                ..cfg()
            },
        );
        let msgs = [ChatMessage::user("same")];
        c.chat("", &msgs).unwrap();
        c.chat("", &msgs).unwrap();
        assert_eq!(t.request_count(), 2);
    }

    #[test]
    fn embeddings_keep_input_order_and_respect_concurrency() {
        let t = Arc::new(StubTransport::echo(16).with_latency(Duration::from_millis(5)));
        let c = client(
            t.clone(),
            ProviderConfig {
                batch_size: 1,
                max_concurrency: 3,
                ..cfg()
            },
        );
        let texts: Vec<String> = (0..24).map(|i| format!("text {i}")).collect();
        let got = c.embed_raw(&texts).unwrap();
        let want = HashEmbedder::new(16).embed_raw(&texts).unwrap();
        assert_eq!(got, want);
        assert!(t.max_in_flight() <= 3, "in flight {}", t.max_in_flight());
        assert!(t.max_in_flight() >= 2);

        // cached on the second pass
        let before = t.request_count();
        c.embed_raw(&texts).unwrap();
        assert_eq!(t.request_count(), before);
    }
}
