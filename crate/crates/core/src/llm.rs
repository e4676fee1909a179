//! Blocking client for Ollama-compatible chat and embedding endpoints.
//!
//! Shapes on the wire are documented in `docs/wire.md`. Transport errors and
//! 5xx responses are retried with exponential backoff; 4xx responses fail
//! immediately.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::ops::AddAssign;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::embedding::{Embedder, Embedding, EmbeddingError};

pub const ENV_BASE_URL: &str = "DUALPOOL_LLM_BASE_URL";
pub const ENV_MODEL: &str = "DUALPOOL_LLM_MODEL";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("embedding endpoint returned a zero vector")]
    ZeroVector,
    #[error("embedding has dimension {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
    pub chat_path: String,
    pub embed_path: String,
    pub max_in_flight: usize,
    /// Expected embedding dimension, checked on every response when set.
    pub dimension: Option<usize>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434".into(),
            model: "qwen3:8b".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            backoff_ms: 500,
            chat_path: "/api/chat".into(),
            embed_path: "/api/embeddings".into(),
            max_in_flight: 4,
            dimension: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(LlmError::Config(format!("timeout_secs must be > 0, got {}", self.timeout_secs)));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be >= 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// Applies `DUALPOOL_LLM_BASE_URL` and `DUALPOOL_LLM_MODEL` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            self.base_url = url;
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt += rhs.prompt;
        self.completion += rhs.completion;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub user: String,
    pub response: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// Requests sent, including retries.
    pub attempts: u32,
}

impl ChatExchange {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            prompt: self.prompt_tokens.unwrap_or(0),
            completion: self.completion_tokens.unwrap_or(0),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable client handle; clones share the in-flight cap and token tally.
#[derive(Clone)]
pub struct LlmClient {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
    gate: Arc<Gate>,
    usage: Arc<Mutex<TokenUsage>>,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            gate: Arc::new(Gate {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            }),
            cfg,
            http,
            usage: Arc::new(Mutex::new(TokenUsage::default())),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Tokens reported by every exchange made through this client and its clones.
    pub fn usage(&self) -> TokenUsage {
        *self.usage.lock().expect("usage lock")
    }

    fn post(&self, path: &str, body: &Value) -> Result<(Value, u32), LlmError> {
        let _permit = self.gate.acquire();
        let url = self.cfg.url(path);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let retryable = match self.http.post(&url).json(body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| LlmError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    if status.is_success() {
                        let text = text?;
                        let value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
                        return Ok((value, attempt));
                    }
                    let err = LlmError::Status {
                        status: status.as_u16(),
                        attempts: attempt,
                        body: text.unwrap_or_default(),
                    };
                    if !status.is_server_error() {
                        return Err(err);
                    }
                    err
                }
                Err(e) => LlmError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.cfg.max_retries {
                return Err(retryable);
            }
            let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            debug!("{url}: attempt {attempt} failed ({retryable}), retrying in {delay} ms");
            thread::sleep(Duration::from_millis(delay));
        }
    }

    /// One single-turn, non-streaming completion.
    pub fn chat(&self, system: &str, user: &str) -> Result<ChatExchange, LlmError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "stream": false,
        });
        let (v, attempts) = self.post(&self.cfg.chat_path, &body)?;
        let response = v
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::Malformed("missing message.content".into()))?
            .to_string();
        let count = |k: &str| v.get(k).and_then(Value::as_u64);
        let exchange = ChatExchange {
            system: system.into(),
            user: user.into(),
            response,
            prompt_tokens: count("prompt_eval_count"),
            completion_tokens: count("eval_count"),
            attempts,
        };
        *self.usage.lock().expect("usage lock") += exchange.usage();
        Ok(exchange)
    }

    /// Embeds `text` remotely and L2-normalizes the result locally.
    pub fn embed_remote(&self, text: &str) -> Result<Embedding, LlmError> {
        let body = json!({"model": self.cfg.model, "prompt": text});
        let (v, _) = self.post(&self.cfg.embed_path, &body)?;
        let values: Vec<f64> = v
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Malformed("missing embedding array".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| LlmError::Malformed("non-numeric embedding entry".into())))
            .collect::<Result<_, _>>()?;
        if let Some(expected) = self.cfg.dimension {
            if values.len() != expected {
                return Err(LlmError::Dimension {
                    expected,
                    actual: values.len(),
                });
            }
        }
        Embedding::normalized(values).map_err(|e| match e {
            EmbeddingError::ZeroVector | EmbeddingError::ZeroDimension => LlmError::ZeroVector,
            other => LlmError::Malformed(other.to_string()),
        })
    }
}

/// [`Embedder`] backed by the embedding endpoint.
pub struct RemoteEmbedder {
    client: LlmClient,
    dimension: usize,
}

impl RemoteEmbedder {
    /// The client's configuration must pin the dimension.
    pub fn new(client: LlmClient) -> Result<Self, LlmError> {
        let dimension = client
            .config()
            .dimension
            .ok_or_else(|| LlmError::Config("remote embedder needs `dimension`".into()))?;
        Ok(Self { client, dimension })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.client
            .embed_remote(text)
            .map_err(|e| EmbeddingError::Backend(e.to_string()))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Minimal HTTP/1.1 server replying with a scripted sequence of
/// `(status, body)` pairs; the last pair repeats once the script runs out.
/// Intended for tests and offline examples.
pub struct MockServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "mock script needs at least one response");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (h, r, s) = (hits.clone(), requests.clone(), stop.clone());
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (status, body) = &script[n.min(script.len() - 1)];
                if let Ok(req) = serve(stream, *status, body) {
                    r.lock().expect("request log").push(req);
                }
            }
        });
        Ok(Self {
            addr,
            hits,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Request bodies received so far.
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, status: u16, body: &str) -> std::io::Result<String> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut req = vec![0u8; length];
    reader.read_exact(&mut req)?;
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()?;
    Ok(String::from_utf8_lossy(&req).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(url: String) -> LlmClient {
        LlmClient::new(EndpointConfig {
            base_url: url,
            timeout_secs: 5.0,
            backoff_ms: 1,
            max_retries: 3,
            ..EndpointConfig::default()
        })
        .unwrap()
    }

    fn chat_body(text: &str) -> String {
        json!({"message": {"role": "assistant", "content": text}, "prompt_eval_count": 12, "eval_count": 5}).to_string()
    }

    #[test]
    fn fixture_round_trip() {
        let server = MockServer::start(vec![(200, chat_body("forty-two"))]).unwrap();
        let c = client(server.base_url());
        let x = c.chat("sys", "question").unwrap();
        assert_eq!(x.response, "forty-two");
        assert_eq!(x.attempts, 1);
        assert_eq!(x.usage(), TokenUsage { prompt: 12, completion: 5 });
        let sent: Value = serde_json::from_str(&server.requests()[0]).unwrap();
        assert_eq!(sent["messages"][1]["content"], "question");
        assert_eq!(sent["stream"], false);
    }

    #[test]
    fn server_errors_are_retried() {
        let server = MockServer::start(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (200, chat_body("ok")),
        ])
        .unwrap();
        let x = client(server.base_url()).chat("s", "u").unwrap();
        assert_eq!(x.attempts, 3);
        assert_eq!(server.hits(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(vec![(404, "not found".into())]).unwrap();
        let err = client(server.base_url()).chat("s", "u").unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 404, attempts: 1, .. }));
        assert_eq!(server.hits(), 1);
    }

    #[test]
    fn malformed_body_is_its_own_error() {
        let server = MockServer::start(vec![(200, "{\"nope\": 1}".into())]).unwrap();
        assert!(matches!(client(server.base_url()).chat("s", "u"), Err(LlmError::Malformed(_))));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let c = LlmClient::new(EndpointConfig {
            base_url: format!("http://127.0.0.1:{port}"),
            max_retries: 2,
            backoff_ms: 1,
            ..EndpointConfig::default()
        })
        .unwrap();
        assert!(matches!(c.chat("s", "u"), Err(LlmError::Transport { attempts: 3, .. })));
    }

    #[test]
    fn embedding_is_normalized_locally() {
        let server = MockServer::start(vec![(200, json!({"embedding": [3.0, 4.0]}).to_string())]).unwrap();
        let c = client(server.base_url());
        let a = c.embed_remote("x").unwrap();
        assert_eq!(a.values(), &[0.6, 0.8]);
        assert_eq!(c.embed_remote("x").unwrap(), a);
    }

    #[test]
    fn zero_and_mismatched_embeddings_fail() {
        let server = MockServer::start(vec![(200, json!({"embedding": [0.0, 0.0]}).to_string())]).unwrap();
        assert!(matches!(client(server.base_url()).embed_remote("x"), Err(LlmError::ZeroVector)));
        let server = MockServer::start(vec![(200, json!({"embedding": [3.0, 4.0]}).to_string())]).unwrap();
        let c = LlmClient::new(EndpointConfig {
            base_url: server.base_url(),
            dimension: Some(3),
            ..EndpointConfig::default()
        })
        .unwrap();
        assert!(matches!(c.embed_remote("x"), Err(LlmError::Dimension { expected: 3, actual: 2 })));
    }

    #[test]
    fn usage_accumulates_across_clones() {
        let server = MockServer::start(vec![(200, chat_body("a"))]).unwrap();
        let c = client(server.base_url());
        let d = c.clone();
        c.chat("s", "u").unwrap();
        d.chat("s", "u").unwrap();
        assert_eq!(c.usage(), TokenUsage { prompt: 24, completion: 10 });
    }

    #[test]
    fn config_validation() {
        let bad = EndpointConfig {
            timeout_secs: 0.0,
            ..EndpointConfig::default()
        };
        assert!(matches!(LlmClient::new(bad), Err(LlmError::Config(_))));
    }
}
