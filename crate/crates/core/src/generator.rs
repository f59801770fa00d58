//! Text generator backends: a chat-completion client for OpenAI-compatible
//! endpoints and a scripted mock used for tests and reproducible runs.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::header_tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Live,
    Mock,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Backend::Live),
            "mock" => Ok(Backend::Mock),
            other => Err(format!("unknown backend '{other}' (expected live or mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub backend: Backend,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub api_key_env: String,
    /// First backoff delay; doubles per retry.
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    /// Mock script path.
    pub script: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            backend: Backend::Mock,
            endpoint_url: String::new(),
            model_name: String::new(),
            temperature: 1.0,
            max_retries: 3,
            timeout_secs: 120.0,
            api_key_env: "EVOHEUR_API_KEY".into(),
            backoff_base_ms: 1000,
            max_in_flight: 4,
            script: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.temperature >= 0.0) {
            return Err(GeneratorError::Config("temperature must be >= 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GeneratorError::Config("max_in_flight must be >= 1".into()));
        }
        match self.backend {
            Backend::Live => {
                if self.endpoint_url.trim().is_empty() || self.model_name.trim().is_empty() {
                    return Err(GeneratorError::Config("live backend needs endpoint_url and model_name".into()));
                }
            }
            Backend::Mock => {
                if self.script.is_none() {
                    return Err(GeneratorError::Config("mock backend needs a script".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("empty completion")]
    Empty,
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("generator config: {0}")]
    Config(String),
}

impl GeneratorError {
    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorError::Transport(_) => "transport",
            GeneratorError::Empty => "empty",
            GeneratorError::ScriptExhausted => "script_exhausted",
            GeneratorError::Config(_) => "config",
        }
    }
}

/// One attempt against the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub response: Option<String>,
    pub latency_secs: f64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub attempt: u32,
    pub error: Option<String>,
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError>;
    /// Attempts made so far, retries included.
    fn request_count(&self) -> u64;
    fn records(&self) -> Vec<GenerationRecord>;
}

pub fn build(config: &GeneratorConfig) -> Result<Box<dyn Generator>, GeneratorError> {
    config.validate()?;
    match config.backend {
        Backend::Mock => Ok(Box::new(MockGenerator::from_file(config.script.as_deref().expect("validated"))?)),
        Backend::Live => Ok(Box::new(LiveGenerator::from_env(config.clone())?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Operator tag the prompt header must carry (I1, E1, ..., EXTRACT).
    #[serde(default)]
    pub strategy: Option<String>,
    /// Substring the prompt must contain.
    #[serde(default, rename = "match")]
    pub pattern: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    fn matches(&self, prompt: &str) -> bool {
        let tag_ok = self.strategy.as_deref().is_none_or(|s| header_tag(prompt) == Some(s));
        let pat_ok = self.pattern.as_deref().is_none_or(|p| prompt.contains(p));
        tag_ok && pat_ok
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, GeneratorError> {
        toml::from_str(text).map_err(|e| GeneratorError::Config(format!("bad mock script: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }
}

#[derive(Debug, Default)]
struct MockState {
    consumed: Vec<bool>,
    records: Vec<GenerationRecord>,
}

/// Serves scripted responses in order. Each call takes the first unconsumed
/// entry whose filters accept the prompt.
#[derive(Debug)]
pub struct MockGenerator {
    script: Script,
    state: Mutex<MockState>,
}

impl MockGenerator {
    pub fn new(script: Script) -> Self {
        let n = script.responses.len();
        MockGenerator { script, state: Mutex::new(MockState { consumed: vec![false; n], records: Vec::new() }) }
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script {
            responses: responses.into_iter().map(|r| ScriptEntry { strategy: None, pattern: None, response: r.into() }).collect(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, GeneratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeneratorError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(Script::parse(&text)?))
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().consumed.iter().filter(|c| !**c).count()
    }
}

impl Generator for MockGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError> {
        let mut st = self.state.lock().unwrap();
        let pick = (0..self.script.responses.len()).find(|&i| !st.consumed[i] && self.script.responses[i].matches(prompt));
        let (result, response) = match pick {
            Some(i) => {
                st.consumed[i] = true;
                let r = self.script.responses[i].response.clone();
                if r.trim().is_empty() {
                    (Err(GeneratorError::Empty), Some(r))
                } else {
                    (Ok(r.clone()), Some(r))
                }
            }
            None => (Err(GeneratorError::ScriptExhausted), None),
        };
        st.records.push(GenerationRecord {
            prompt: prompt.to_string(),
            response,
            latency_secs: 0.0,
            prompt_tokens: None,
            completion_tokens: None,
            attempt: 1,
            error: result.as_ref().err().map(|e| e.kind().to_string()),
        });
        result
    }

    fn request_count(&self) -> u64 {
        self.state.lock().unwrap().records.len() as u64
    }

    fn records(&self) -> Vec<GenerationRecord> {
        self.state.lock().unwrap().records.clone()
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(GeneratorError),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct LiveGenerator {
    config: GeneratorConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    slots: Slots,
    records: Mutex<Vec<GenerationRecord>>,
}

impl std::fmt::Debug for LiveGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveGenerator").field("endpoint", &self.config.endpoint_url).field("model", &self.config.model_name).finish()
    }
}

impl LiveGenerator {
    pub fn from_env(config: GeneratorConfig) -> Result<Self, GeneratorError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GeneratorError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        Self::new(config, key)
    }

    pub fn new(config: GeneratorConfig, api_key: String) -> Result<Self, GeneratorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GeneratorError::Config(e.to_string()))?;
        let slots = Slots { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() };
        Ok(LiveGenerator { config, api_key, client, slots, records: Mutex::new(Vec::new()) })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint_url.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &str) -> (Result<(String, Option<Usage>), AttemptError>, Duration) {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let start = Instant::now();
        let sent = self.client.post(self.url()).bearer_auth(&self.api_key).json(&body).send();
        let result = match sent {
            Err(e) => Err(AttemptError::Retryable(e.to_string())),
            Ok(resp) => {
                let status = resp.status();
                if status.is_server_error() || status.as_u16() == 429 {
                    Err(AttemptError::Retryable(format!("HTTP {status}")))
                } else if !status.is_success() {
                    let text = resp.text().unwrap_or_default();
                    Err(AttemptError::Fatal(GeneratorError::Transport(format!("HTTP {status}: {}", truncate(&text, 200)))))
                } else {
                    match resp.json::<ChatResponse>() {
                        Err(e) => Err(AttemptError::Fatal(GeneratorError::Transport(format!("malformed response: {e}")))),
                        Ok(parsed) => {
                            let content = parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
                            if content.trim().is_empty() {
                                Err(AttemptError::Fatal(GeneratorError::Empty))
                            } else {
                                Ok((content, parsed.usage))
                            }
                        }
                    }
                }
            }
        };
        (result, start.elapsed())
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::rng().random_range(0.0..=0.25);
        Duration::from_secs_f64(base * (1.0 + jitter) / 1000.0)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Generator for LiveGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError> {
        let _slot = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let (result, latency) = self.attempt(prompt);
            let mut record = GenerationRecord {
                prompt: prompt.to_string(),
                response: None,
                latency_secs: latency.as_secs_f64(),
                prompt_tokens: None,
                completion_tokens: None,
                attempt: attempt + 1,
                error: None,
            };
            match result {
                Ok((text, usage)) => {
                    record.response = Some(text.clone());
                    record.prompt_tokens = usage.as_ref().and_then(|u| u.prompt_tokens);
                    record.completion_tokens = usage.as_ref().and_then(|u| u.completion_tokens);
                    self.records.lock().unwrap().push(record);
                    return Ok(text);
                }
                Err(AttemptError::Fatal(e)) => {
                    record.error = Some(e.to_string());
                    self.records.lock().unwrap().push(record);
                    return Err(e);
                }
                Err(AttemptError::Retryable(msg)) => {
                    log::warn!("generator attempt {} failed: {msg}", attempt + 1);
                    record.error = Some(msg.clone());
                    self.records.lock().unwrap().push(record);
                    last = msg;
                }
            }
        }
        Err(GeneratorError::Transport(last))
    }

    fn request_count(&self) -> u64 {
        self.records.lock().unwrap().len() as u64
    }

    fn records(&self) -> Vec<GenerationRecord> {
        self.records.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    #[test]
    fn mock_serves_in_order() {
        let g = MockGenerator::from_responses(["R1", "R2"]);
        assert_eq!(g.request_count(), 0);
        assert_eq!(g.generate("a").unwrap(), "R1");
        assert_eq!(g.generate("b").unwrap(), "R2");
        assert_eq!(g.generate("c"), Err(GeneratorError::ScriptExhausted));
        assert_eq!(g.request_count(), 3);
        assert_eq!(g.records().len(), 3);
    }

    #[test]
    fn mock_filters_by_header_and_pattern() {
        let script = Script::parse(
            r#"
            [[responses]]
            strategy = "EXTRACT"
            response = "- principle one has words"

            [[responses]]
            match = "special"
            response = "S"

            [[responses]]
            response = "plain"
            "#,
        )
        .unwrap();
        let g = MockGenerator::new(script);
        assert_eq!(g.generate("<!-- strategy: E1 -->\nhello").unwrap(), "plain");
        assert_eq!(g.generate("<!-- strategy: E1 -->\nspecial").unwrap(), "S");
        assert_eq!(g.generate("<!-- strategy: EXTRACT -->\nx").unwrap(), "- principle one has words");
        assert_eq!(g.remaining(), 0);
    }

    #[test]
    fn mock_empty_response_is_an_error() {
        let g = MockGenerator::from_responses(["  "]);
        assert_eq!(g.generate("p"), Err(GeneratorError::Empty));
    }

    #[test]
    fn script_round_trips_through_toml() {
        let s = Script {
            responses: vec![ScriptEntry { strategy: Some("I1".into()), pattern: None, response: "{x}\n```\ndef f(): pass\n```".into() }],
        };
        let back = Script::parse(&s.to_toml()).unwrap();
        assert_eq!(back.responses, s.responses);
    }

    fn live_config(url: String) -> GeneratorConfig {
        GeneratorConfig {
            backend: Backend::Live,
            endpoint_url: url,
            model_name: "m".into(),
            max_retries: 2,
            timeout_secs: 5.0,
            backoff_base_ms: 1,
            ..Default::default()
        }
    }

    /// Answers each connection with the next canned (status, body) pair and
    /// records the raw requests.
    fn fake_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                head.push_str(&String::from_utf8_lossy(&buf));
                log.lock().unwrap().push(head);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, seen)
    }

    #[test]
    fn live_retries_server_errors_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let (url, seen) = fake_server(vec![(500, "{}".into()), (429, "{}".into()), (200, ok.into())]);
        let g = LiveGenerator::new(live_config(url), "sekret".into()).unwrap();
        assert_eq!(g.generate("prompt text").unwrap(), "hello");
        assert_eq!(g.request_count(), 3);
        let recs = g.records();
        assert_eq!(recs.iter().map(|r| r.attempt).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(recs[2].completion_tokens, Some(1));
        let requests = seen.lock().unwrap();
        let first = requests[0].to_ascii_lowercase();
        assert!(first.starts_with("post /chat/completions"));
        assert!(first.contains("authorization: bearer sekret"));
        let body = requests[0].split("\r\n\r\n").nth(1).unwrap();
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"], "prompt text");
        assert_eq!(v["temperature"], 1.0);
        assert_eq!(v["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn live_empty_completion() {
        let (url, _) = fake_server(vec![(200, r#"{"choices":[{"message":{"content":""}}]}"#.into())]);
        let g = LiveGenerator::new(live_config(url), "k".into()).unwrap();
        assert_eq!(g.generate("p"), Err(GeneratorError::Empty));
        assert_eq!(g.request_count(), 1);
    }

    #[test]
    fn live_unreachable_endpoint_exhausts_retries() {
        // bind then drop to get a port with nothing listening
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let g = LiveGenerator::new(live_config(format!("http://127.0.0.1:{port}")), "k".into()).unwrap();
        assert!(matches!(g.generate("p"), Err(GeneratorError::Transport(_))));
        assert_eq!(g.request_count(), 3);
    }

    #[test]
    fn missing_api_key_is_a_config_error() {
        let mut cfg = live_config("http://127.0.0.1:9".into());
        cfg.api_key_env = "EVOHEUR_TEST_SURELY_UNSET_KEY".into();
        assert!(matches!(LiveGenerator::from_env(cfg), Err(GeneratorError::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = GeneratorConfig::default();
        assert!(cfg.validate().is_err());
        cfg.script = Some("s.toml".into());
        assert!(cfg.validate().is_ok());
        cfg.temperature = -1.0;
        assert!(cfg.validate().is_err());
        let live = GeneratorConfig { backend: Backend::Live, ..Default::default() };
        assert!(live.validate().is_err());
    }
}
