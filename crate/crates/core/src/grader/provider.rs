use std::collections::VecDeque;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_fields;
use crate::keybank::Attachment;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    InvalidResponse(String),
    #[error("{0}")]
    Unavailable(String),
}

/// One chat-completion request. Requests carry no conversation history.
#[derive(Debug, Clone, Copy)]
pub struct ProviderRequest<'a> {
    pub prompt: &'a str,
    pub image: &'a Attachment,
    pub model_id: &'a str,
    pub temperature: Option<f64>,
    /// Bookkeeping only; never sent to remote providers.
    pub pass_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_ms: f64,
}

/// A multimodal chat model. Implementations keep no state between calls
/// that could influence a later completion.
pub trait GradingProvider: Send + Sync {
    fn submit(&self, request: &ProviderRequest<'_>) -> Result<Completion, ProviderError>;
}

/// What a test double saw on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub prompt: String,
    pub image_hash: String,
    pub image_count: usize,
    pub model_id: String,
    pub pass_index: usize,
}

impl LoggedRequest {
    fn of(request: &ProviderRequest<'_>) -> Self {
        LoggedRequest {
            prompt: request.prompt.to_string(),
            image_hash: request.image.content_hash.clone(),
            image_count: 1,
            model_id: request.model_id.to_string(),
            pass_index: request.pass_index,
        }
    }
}

/// Seeded offline stand-in for a grading model.
///
/// The base score is a pure function of the seed, prompt and image, so every
/// submission gets a stable "true" grade. Unless built with
/// [`MockProvider::deterministic`], each pass adds reproducible noise keyed
/// by the pass index: most passes agree, some are off by one and a few are
/// outliers.
#[derive(Debug)]
pub struct MockProvider {
    seed: u64,
    jitter: bool,
    simulated_latency_ms: f64,
    log: Mutex<Vec<LoggedRequest>>,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        MockProvider {
            seed,
            jitter: true,
            simulated_latency_ms: 850.0,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn deterministic(seed: u64) -> Self {
        MockProvider {
            jitter: false,
            ..MockProvider::new(seed)
        }
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    fn rng(&self, request: &ProviderRequest<'_>, salt: &[u8]) -> ChaCha8Rng {
        let digest = sha256_fields([
            &self.seed.to_le_bytes()[..],
            request.prompt.as_bytes(),
            request.image.content_hash.as_bytes(),
            salt,
        ]);
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&digest, &mut seed).expect("hex digest");
        ChaCha8Rng::from_seed(seed)
    }
}

impl GradingProvider for MockProvider {
    fn submit(&self, request: &ProviderRequest<'_>) -> Result<Completion, ProviderError> {
        self.log.lock().unwrap().push(LoggedRequest::of(request));
        let base: i32 = self.rng(request, b"base").random_range(0..=10);
        let mut pass = self.rng(request, &request.pass_index.to_le_bytes());
        let (score, flag) = if self.jitter {
            let roll: f64 = pass.random();
            let delta = if roll < 0.6 {
                0
            } else if roll < 0.92 {
                if pass.random_bool(0.5) {
                    1
                } else {
                    -1
                }
            } else {
                pass.random_range(-5..=5)
            };
            ((base + delta).clamp(0, 10), pass.random_bool(0.05))
        } else {
            (base, false)
        };
        let text = format!(
            "The student's work was compared against the grading key step by step.\n\
             Steps with written evidence were credited; unsupported claims were not.\n\
             Total: {score}/10\n\
             Flag: {}\n\
             Motivation: {score} of 10 points are supported by the written solution.",
            u8::from(flag)
        );
        Ok(Completion {
            text,
            latency_ms: self.simulated_latency_ms,
        })
    }
}

/// Replays a fixed list of outcomes, then fails.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    calls: AtomicUsize,
    log: Mutex<Vec<LoggedRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedProvider {
            script: Mutex::new(script.into()),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn failing() -> Self {
        Self::new(vec![])
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl GradingProvider for ScriptedProvider {
    fn submit(&self, request: &ProviderRequest<'_>) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(LoggedRequest::of(request));
        let next = self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Unavailable("script exhausted".into())));
        next.map(|text| Completion {
            text,
            latency_ms: 0.0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// JSON-lines file receiving request and response bodies.
    pub log_path: Option<PathBuf>,
}

/// Chat-completions compatible HTTP client.
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
    log: Option<Mutex<File>>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let log = match &config.log_path {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ProviderError::Unavailable(format!("request log: {e}")))?,
            )),
            None => None,
        };
        Ok(HttpProvider {
            config,
            client,
            log,
        })
    }

    pub fn request_body(request: &ProviderRequest<'_>) -> Value {
        let data = base64::engine::general_purpose::STANDARD.encode(request.image.bytes.as_slice());
        let mut body = json!({
            "model": request.model_id,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": request.prompt },
                    {
                        "type": "image_url",
                        "image_url": { "url": format!("data:{};base64,{}", request.image.media_type, data) }
                    }
                ]
            }]
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn write_log(&self, direction: &str, mut body: Value, image_hash: &str) {
        let Some(log) = &self.log else { return };
        // Image payloads are replaced by their digest.
        if let Some(parts) = body
            .pointer_mut("/messages/0/content")
            .and_then(Value::as_array_mut)
        {
            for part in parts {
                if part.get("image_url").is_some() {
                    part["image_url"] = json!({ "url": format!("<image sha256={image_hash}>") });
                }
            }
        }
        let mut line = json!({ "direction": direction, "body": body }).to_string();
        if let Some(key) = self.config.api_key.as_deref().filter(|k| !k.is_empty()) {
            line = line.replace(key, "[REDACTED]");
        }
        let mut f = log.lock().unwrap();
        let _ = writeln!(f, "{line}");
    }
}

fn completion_text(response: &Value) -> Option<String> {
    let content = response.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl GradingProvider for HttpProvider {
    fn submit(&self, request: &ProviderRequest<'_>) -> Result<Completion, ProviderError> {
        let body = Self::request_body(request);
        self.write_log("request", body.clone(), &request.image.content_hash);
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = builder
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        let parsed: Value = serde_json::from_str(&text).unwrap_or(Value::String(text.clone()));
        self.write_log("response", parsed.clone(), &request.image.content_hash);
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let text = completion_text(&parsed).ok_or_else(|| {
            ProviderError::InvalidResponse("no choices[0].message.content".into())
        })?;
        Ok(Completion { text, latency_ms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::bundle;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    fn request<'a>(
        prompt: &'a str,
        image: &'a Attachment,
        pass_index: usize,
    ) -> ProviderRequest<'a> {
        ProviderRequest {
            prompt,
            image,
            model_id: "gpt-test",
            temperature: None,
            pass_index,
        }
    }

    #[test]
    fn mock_is_reproducible_per_pass() {
        let b = bundle();
        let text = b.text();
        let a = MockProvider::new(5);
        let c = MockProvider::new(5);
        for i in 0..5 {
            let r = request(&text, &b.attachment, i);
            assert_eq!(a.submit(&r).unwrap(), c.submit(&r).unwrap());
        }
    }

    #[test]
    fn mock_passes_vary_for_some_inputs() {
        let b = bundle();
        let text = b.text();
        let varied = (0..50u64).any(|seed| {
            let m = MockProvider::new(seed);
            let scores: Vec<_> = (0..5)
                .map(|i| m.submit(&request(&text, &b.attachment, i)).unwrap().text)
                .collect();
            scores.iter().any(|s| s != &scores[0])
        });
        assert!(varied);
    }

    /// One-shot HTTP server answering a single request with `reply`.
    fn serve_once(
        status: u16,
        reply: String,
    ) -> (String, std::thread::JoinHandle<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            (headers, String::from_utf8(body).unwrap())
        });
        (url, handle)
    }

    #[test]
    fn http_provider_round_trip() {
        let reply = json!({"choices": [{"message": {"role": "assistant", "content": "Total: 6/10\nFlag: 0"}}]});
        let (url, server) = serve_once(200, reply.to_string());
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("requests.jsonl");
        let provider = HttpProvider::new(HttpProviderConfig {
            endpoint: url,
            api_key: Some("sk-secret-123".into()),
            timeout: Duration::from_secs(10),
            log_path: Some(log_path.clone()),
        })
        .unwrap();
        let b = bundle();
        let text = b.text();
        let mut r = request(&text, &b.attachment, 3);
        r.temperature = Some(0.2);
        let completion = provider.submit(&r).unwrap();
        assert_eq!(completion.text, "Total: 6/10\nFlag: 0");

        let (headers, body) = server.join().unwrap();
        assert!(headers
            .to_ascii_lowercase()
            .contains("authorization: bearer sk-secret-123"));
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], text.as_str());
        assert!(parts[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert!(!body.to_string().contains("pass_index"));

        let log = std::fs::read_to_string(log_path).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(!log.contains("sk-secret-123"));
        assert!(!log.contains("base64,"));
    }

    #[test]
    fn http_error_status_is_reported() {
        let (url, server) = serve_once(503, "{\"error\":\"overloaded\"}".into());
        let provider = HttpProvider::new(HttpProviderConfig {
            endpoint: url,
            api_key: None,
            timeout: Duration::from_secs(10),
            log_path: None,
        })
        .unwrap();
        let b = bundle();
        let text = b.text();
        let err = provider
            .submit(&request(&text, &b.attachment, 0))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 503, .. }));
        server.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let provider = HttpProvider::new(HttpProviderConfig {
            endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            api_key: None,
            timeout: Duration::from_secs(2),
            log_path: None,
        })
        .unwrap();
        let b = bundle();
        let text = b.text();
        assert!(matches!(
            provider.submit(&request(&text, &b.attachment, 0)),
            Err(ProviderError::Transport(_))
        ));
    }
}
