use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub task_id: &'a str,
    pub trial: u32,
    /// Zero-based turn index within the episode.
    pub turn: usize,
    pub messages: &'a [Message],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion: {0}")]
    Malformed(String),
    #[error("no scripted response for task `{task_id}` turn {turn}")]
    NoScriptedResponse { task_id: String, turn: usize },
    #[error("scripted failure: {0}")]
    Scripted(String),
}

impl ModelError {
    fn retryable(&self) -> bool {
        match self {
            ModelError::Transport(_) => true,
            ModelError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// A chat model. Implementations are shared across worker threads.
pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ModelError>;
}

/// One line of a mock script. Entries without `task_id` or `turn` match any
/// value; the most specific match wins, ties going to the earliest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    #[serde(default)]
    pub response: String,
    /// When set, the call fails with this message instead of responding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockEntry {
    pub fn on_turn(turn: usize, response: impl Into<String>) -> Self {
        Self {
            task_id: None,
            turn: Some(turn),
            response: response.into(),
            error: None,
        }
    }

    pub fn always(response: impl Into<String>) -> Self {
        Self {
            task_id: None,
            turn: None,
            response: response.into(),
            error: None,
        }
    }

    pub fn for_task(mut self, task_id: impl Into<String>) -> Self {
        self.task_id = Some(task_id.into());
        self
    }

    fn specificity(&self, task_id: &str, turn: usize) -> Option<u8> {
        let task = match &self.task_id {
            Some(t) if t == task_id => 2,
            Some(_) => return None,
            None => 0,
        };
        let turn = match self.turn {
            Some(t) if t == turn => 1,
            Some(_) => return None,
            None => 0,
        };
        Some(task + turn)
    }
}

/// Replays canned responses; deterministic and free of I/O after loading.
#[derive(Debug, Clone, Default)]
pub struct MockModelClient {
    entries: Vec<MockEntry>,
}

impl MockModelClient {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", n + 1)))
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

impl ModelClient for MockModelClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ModelError> {
        let mut best: Option<(u8, &MockEntry)> = None;
        for entry in &self.entries {
            if let Some(score) = entry.specificity(request.task_id, request.turn) {
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, entry));
                }
            }
        }
        match best {
            Some((_, MockEntry { error: Some(msg), .. })) => Err(ModelError::Scripted(msg.clone())),
            Some((_, entry)) => Ok(entry.response.clone()),
            None => Err(ModelError::NoScriptedResponse {
                task_id: request.task_id.to_string(),
                turn: request.turn,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_seconds: f64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_seconds: 1.0,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let secs = self.initial_backoff_seconds * self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpModelConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the credential; no auth header when unset.
    pub auth_env: Option<String>,
    pub auth_header: String,
    /// Prepended to the credential, e.g. `"Bearer "`.
    pub auth_prefix: String,
    pub timeout_seconds: f64,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub retry: RetryPolicy,
    /// Extra top-level fields merged into every request body.
    pub extra_body: BTreeMap<String, serde_json::Value>,
}

impl Default for HttpModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: String::new(),
            auth_env: None,
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            timeout_seconds: 600.0,
            temperature: None,
            max_tokens: None,
            retry: RetryPolicy::default(),
            extra_body: BTreeMap::new(),
        }
    }
}

/// Client for an HTTP chat-completion endpoint
/// (`{model, messages}` in, `choices[0].message.content` out).
pub struct HttpModelClient {
    config: HttpModelConfig,
    auth: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpModelClient {
    pub fn new(config: HttpModelConfig) -> Result<Self, ModelError> {
        let auth = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ModelError::Transport(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_seconds))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(Self { config, auth, http })
    }

    fn body(&self, messages: &[Message]) -> serde_json::Value {
        let mut body = json!({ "model": self.config.model, "messages": messages });
        let obj = body.as_object_mut().expect("object literal");
        if let Some(t) = self.config.temperature {
            obj.insert("temperature".into(), json!(t));
        }
        if let Some(m) = self.config.max_tokens {
            obj.insert("max_tokens".into(), json!(m));
        }
        for (k, v) in &self.config.extra_body {
            obj.insert(k.clone(), v.clone());
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, ModelError> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(token) = &self.auth {
            req = req.header(self.config.auth_header.as_str(), format!("{}{token}", self.config.auth_prefix));
        }
        let resp = req.send().map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ModelError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ModelError::Status { status, body: text });
        }
        extract_content(&text)
    }
}

fn extract_content(body: &str) -> Result<String, ModelError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| ModelError::Malformed(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ModelError::Malformed("missing choices[0].message.content".into()))
}

impl ModelClient for HttpModelClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ModelError> {
        let body = self.body(request.messages);
        let attempts = self.config.retry.attempts.max(1);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.retryable() && retry + 1 < attempts => {
                    retry += 1;
                    tracing::warn!(task = request.task_id, turn = request.turn, error = %e, "retrying model call");
                    std::thread::sleep(self.config.retry.backoff(retry));
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn req<'a>(task: &'a str, turn: usize, messages: &'a [Message]) -> CompletionRequest<'a> {
        CompletionRequest {
            task_id: task,
            trial: 0,
            turn,
            messages,
        }
    }

    #[test]
    fn mock_prefers_specific_entries() {
        let mock = MockModelClient::new(vec![
            MockEntry::always("default"),
            MockEntry::on_turn(1, "turn1"),
            MockEntry::always("task-a").for_task("a"),
            MockEntry::on_turn(1, "a-turn1").for_task("a"),
        ]);
        assert_eq!(mock.complete(&req("b", 0, &[])).unwrap(), "default");
        assert_eq!(mock.complete(&req("b", 1, &[])).unwrap(), "turn1");
        assert_eq!(mock.complete(&req("a", 0, &[])).unwrap(), "task-a");
        assert_eq!(mock.complete(&req("a", 1, &[])).unwrap(), "a-turn1");
    }

    #[test]
    fn mock_missing_and_scripted_errors() {
        let mut failing = MockEntry::on_turn(0, "");
        failing.error = Some("boom".into());
        let mock = MockModelClient::new(vec![failing]);
        assert_eq!(mock.complete(&req("t", 0, &[])), Err(ModelError::Scripted("boom".into())));
        assert!(matches!(mock.complete(&req("t", 1, &[])), Err(ModelError::NoScriptedResponse { .. })));
    }

    #[test]
    fn mock_jsonl_round_trip() {
        let text = "{\"turn\":0,\"response\":\"x\"}\n\n{\"task_id\":\"t\",\"response\":\"y\"}\n";
        let mock = MockModelClient::from_jsonl(text).unwrap();
        assert_eq!(MockModelClient::from_jsonl(&mock.to_jsonl()).unwrap().entries, mock.entries);
        assert!(MockModelClient::from_jsonl("{oops").is_err());
    }

    #[test]
    fn backoff_is_exponential_from_one_second() {
        let p = RetryPolicy::default();
        assert_eq!(p.attempts, 3);
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(2), Duration::from_secs(2));
    }

    /// Serves the given (status, body) pairs in order, one per connection,
    /// recording each request's headers and body.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                head.push_str(&String::from_utf8_lossy(&buf));
                log.lock().unwrap().push(head);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (url, seen)
    }

    fn client(url: String, attempts: u32) -> HttpModelClient {
        HttpModelClient::new(HttpModelConfig {
            endpoint: url,
            model: "m".into(),
            auth_env: Some("TERMFORGE_TEST_KEY".into()),
            retry: RetryPolicy {
                attempts,
                initial_backoff_seconds: 0.01,
                multiplier: 2.0,
            },
            ..HttpModelConfig::default()
        })
        .unwrap()
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;

    #[test]
    fn http_retries_5xx_then_succeeds() {
        std::env::set_var("TERMFORGE_TEST_KEY", "sk-test");
        let (url, seen) = serve(vec![(503, "busy".into()), (429, "slow".into()), (200, OK.into())]);
        let msgs = [Message::new(Role::User, "hi")];
        assert_eq!(client(url, 3).complete(&req("t", 0, &msgs)).unwrap(), "hello");
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[0].to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen[0].contains(r#""messages":[{"role":"user","content":"hi"}]"#));
    }

    #[test]
    fn http_does_not_retry_client_errors() {
        std::env::set_var("TERMFORGE_TEST_KEY", "sk-test");
        let (url, seen) = serve(vec![(400, "bad".into())]);
        let err = client(url, 3).complete(&req("t", 0, &[])).unwrap_err();
        assert_eq!(err, ModelError::Status { status: 400, body: "bad".into() });
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn http_gives_up_after_attempts() {
        std::env::set_var("TERMFORGE_TEST_KEY", "sk-test");
        let (url, _) = serve(vec![(500, "a".into()), (500, "b".into())]);
        let err = client(url, 2).complete(&req("t", 0, &[])).unwrap_err();
        assert_eq!(err, ModelError::Status { status: 500, body: "b".into() });
    }

    #[test]
    fn malformed_completion() {
        assert!(matches!(extract_content("{}"), Err(ModelError::Malformed(_))));
        assert_eq!(extract_content(OK).unwrap(), "hello");
    }
}
