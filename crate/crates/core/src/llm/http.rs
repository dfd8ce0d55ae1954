use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LlmBackend, LlmError, LlmRequest};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of an OpenAI-compatible chat-completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_in_flight: 4,
            max_retries: 4,
            backoff_ms: 500,
            timeout_ms: 120_000,
        }
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Live chat-completions client with bounded concurrency and retries on
/// rate limiting and server errors.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
    gate: Gate,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingCredentials(config.api_key_env.clone()))?;
        Ok(Self::with_api_key(config, key))
    }

    pub fn with_api_key(config: HttpConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let width = config.max_in_flight.max(1);
        Self {
            config,
            api_key,
            agent,
            gate: Gate {
                free: Mutex::new(width),
                cv: Condvar::new(),
            },
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    /// (prompt, completion) tokens reported by the server so far.
    pub fn tokens_used(&self) -> (u64, u64) {
        (
            self.prompt_tokens.load(Ordering::Relaxed),
            self.completion_tokens.load(Ordering::Relaxed),
        )
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}: {}", snippet(&text))));
        }
        if status >= 400 {
            return Err((false, format!("HTTP {status}: {}", snippet(&text))));
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| (false, format!("bad JSON: {e}")))?;
        if let Some(usage) = value.get("usage") {
            let n = |k: &str| usage.get(k).and_then(|v| v.as_u64()).unwrap_or(0);
            self.prompt_tokens.fetch_add(n("prompt_tokens"), Ordering::Relaxed);
            self.completion_tokens
                .fetch_add(n("completion_tokens"), Ordering::Relaxed);
        }
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| (false, format!("no message content in {}", snippet(&text))))
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<String, LlmError> {
        let body = json!({
            "model": request.config.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.config.sampling_temperature,
            "max_tokens": request.config.max_output_tokens,
            "seed": request.seed,
        });
        let _permit = self.gate.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) if retryable && attempt < self.config.max_retries => {
                    tracing::warn!(role = %request.role, attempt, "retrying: {msg}");
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
                Err((_, msg)) => return Err(LlmError::Backend(msg)),
            }
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Role, RoleConfig};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs to consecutive connections and
    /// returns the request bodies it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn request_with(backend: &HttpBackend) -> Result<String, LlmError> {
        let config = RoleConfig::default_for(Role::Critic);
        backend.complete(&LlmRequest {
            role: Role::Critic,
            prompt: "judge this",
            config: &config,
            seed: 11,
        })
    }

    fn config(url: String) -> HttpConfig {
        HttpConfig {
            endpoint: url,
            backoff_ms: 1,
            timeout_ms: 5_000,
            ..HttpConfig::default()
        }
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let ok =
            r#"{"choices":[{"message":{"content":"score: 1"}}],"usage":{"prompt_tokens":5,"completion_tokens":2}}"#;
        let (url, server) = serve(vec![(429, "{}".into()), (200, ok.into())]);
        let backend = HttpBackend::with_api_key(config(url), "k".into());
        assert_eq!(request_with(&backend).unwrap(), "score: 1");
        assert_eq!(backend.tokens_used(), (5, 2));
        let seen = server.join().unwrap();
        let body: serde_json::Value = serde_json::from_str(&seen[1]).unwrap();
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["seed"], 11);
        assert_eq!(body["messages"][0]["content"], "judge this");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let backend = HttpBackend::with_api_key(config(url), "k".into());
        assert!(matches!(request_with(&backend), Err(LlmError::Backend(_))));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn missing_key_is_reported() {
        let cfg = HttpConfig {
            api_key_env: "CASQL_TEST_KEY_THAT_IS_NEVER_SET".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(
            HttpBackend::from_env(cfg),
            Err(LlmError::MissingCredentials(_))
        ));
    }
}
