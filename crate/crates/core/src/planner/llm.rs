//! Completion-service client with transcript record and replay, and the
//! planner built on it.
//!
//! The endpoint and credential come from the config or from the
//! `INVPLAN_LLM_ENDPOINT` and `INVPLAN_API_KEY` environment variables. The
//! credential is never logged or written to transcripts.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::plan::Plan;

use super::prompt::{parse_llm_plan, render_planning_prompt, Exemplars};
use super::{Planner, PlannerError, PlannerRequest};

pub const ENDPOINT_VAR: &str = "INVPLAN_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "INVPLAN_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("completion service failed: {0}")]
    Service(String),
    #[error("no transcript entry for prompt {prompt_sha256} ({model}, temperature {temperature})")]
    ReplayMiss {
        prompt_sha256: String,
        model: String,
        temperature: String,
    },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("invalid LLM config: {0}")]
    Config(String),
}

/// `min(base + round * increment, cap)`, rounded to three decimals so that
/// transcript keys compare exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub base: f64,
    pub increment: f64,
    pub cap: f64,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl TemperatureSchedule {
    pub fn at(&self, round: usize) -> f64 {
        round3((self.base + round as f64 * self.increment).min(self.cap))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    #[default]
    Off,
    Record,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    pub model: String,
    pub planning: TemperatureSchedule,
    /// Fixed temperature for validation prompts; the planning schedule is
    /// used when absent.
    pub validation_temperature: Option<f64>,
    pub max_tokens: u32,
    pub transcript: Option<PathBuf>,
    pub mode: TranscriptMode,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Extra attempts after a failed request.
    pub retries: usize,
    /// Few-shot examples per prompt.
    pub exemplars: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::gpt_4o_mini()
    }
}

impl LlmConfig {
    pub fn gpt_4o_mini() -> Self {
        LlmConfig {
            endpoint: None,
            model: "gpt-4o-mini".into(),
            planning: TemperatureSchedule {
                base: 0.0,
                increment: 0.1,
                cap: 0.4,
            },
            validation_temperature: None,
            max_tokens: 2048,
            transcript: None,
            mode: TranscriptMode::Off,
            timeout_secs: 60,
            max_in_flight: 4,
            retries: 2,
            exemplars: 2,
        }
    }

    pub fn gemini_15_flash() -> Self {
        LlmConfig {
            model: "gemini-1.5-flash".into(),
            planning: TemperatureSchedule {
                base: 1.0,
                increment: 0.1,
                cap: 1.4,
            },
            validation_temperature: Some(2.0),
            ..LlmConfig::gpt_4o_mini()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "gpt" | "gpt-4o-mini" => Some(LlmConfig::gpt_4o_mini()),
            "gemini" | "gemini-1.5-flash" => Some(LlmConfig::gemini_15_flash()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let config: LlmConfig = toml::from_str(text).map_err(|e| LlmError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), LlmError> {
        let s = &self.planning;
        let temps = [Some(s.base), Some(s.cap), self.validation_temperature];
        if temps.into_iter().flatten().any(|t| !(0.0..=2.0).contains(&t)) {
            return Err(LlmError::Config("temperatures must lie in [0, 2]".into()));
        }
        if s.increment < 0.0 {
            return Err(LlmError::Config("temperature increment must be non-negative".into()));
        }
        if self.mode != TranscriptMode::Off && self.transcript.is_none() {
            return Err(LlmError::Config("record and replay need a transcript path".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validation_temperature_at(&self, round: usize) -> f64 {
        self.validation_temperature
            .map(round3)
            .unwrap_or_else(|| self.planning.at(round))
    }
}

/// The body sent to the completion endpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait CompletionService: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Limits how many requests are in flight at once.
struct Gate {
    free: Mutex<usize>,
    released: Condvar,
}

impl Gate {
    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.released.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.released.notify_one();
        out
    }
}

/// JSON over HTTP: posts a [`CompletionRequest`] and reads `completion`,
/// `text`, or the first choice of the response.
pub struct HttpService {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    gate: Gate,
}

impl HttpService {
    pub fn new(endpoint: String, api_key: Option<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpService {
            agent,
            endpoint,
            api_key,
            gate: Gate {
                free: Mutex::new(max_in_flight.max(1)),
                released: Condvar::new(),
            },
        }
    }

    /// Endpoint from the config, else from the environment; the key only
    /// from the environment.
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_VAR).ok())
            .ok_or_else(|| LlmError::Config(format!("no endpoint configured; set {ENDPOINT_VAR}")))?;
        Ok(HttpService::new(
            endpoint,
            std::env::var(API_KEY_VAR).ok(),
            Duration::from_secs(config.timeout_secs),
            config.max_in_flight,
        ))
    }

    fn post(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| LlmError::Service(e.to_string()))?;
        let body: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Service(format!("unreadable response: {e}")))?;
        let text = body
            .get("completion")
            .or_else(|| body.get("text"))
            .or_else(|| body.pointer("/choices/0/text"))
            .or_else(|| body.pointer("/choices/0/message/content"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| LlmError::Service("response has no completion text".into()))?;
        Ok(text.to_string())
    }
}

impl CompletionService for HttpService {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.gate.run(|| self.post(request))
    }
}

/// Returns canned completions in order, repeating the last one.
pub struct ScriptedService {
    replies: Vec<Result<String, LlmError>>,
    next: Mutex<usize>,
    pub seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedService {
    pub fn new(replies: Vec<Result<String, LlmError>>) -> Self {
        assert!(!replies.is_empty(), "at least one reply");
        ScriptedService {
            replies,
            next: Mutex::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl CompletionService for ScriptedService {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        let mut next = self.next.lock().unwrap();
        let i = (*next).min(self.replies.len() - 1);
        *next += 1;
        self.replies[i].clone()
    }
}

/// One line of a transcript file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub prompt_sha256: String,
    pub model: String,
    pub temperature: f64,
    pub completion: String,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| LlmError::Transcript(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// A completion client honouring the transcript mode of its config.
pub struct LlmClient {
    pub config: LlmConfig,
    service: Option<Box<dyn CompletionService>>,
    replay: Vec<TranscriptRecord>,
    recorder: Option<Mutex<File>>,
}

impl LlmClient {
    /// In replay mode `service` is never called and may be `None`.
    pub fn new(config: LlmConfig, service: Option<Box<dyn CompletionService>>) -> Result<Self, LlmError> {
        config.check()?;
        let mut client = LlmClient {
            config,
            service,
            replay: Vec::new(),
            recorder: None,
        };
        let path = client.config.transcript.clone();
        match (client.config.mode, path) {
            (TranscriptMode::Replay, Some(p)) => client.replay = read_transcript(&p)?,
            (TranscriptMode::Record, Some(p)) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| LlmError::Transcript(format!("{}: {e}", p.display())))?;
                client.recorder = Some(Mutex::new(file));
            }
            _ => {}
        }
        if client.config.mode != TranscriptMode::Replay && client.service.is_none() {
            return Err(LlmError::Config("a completion service is required".into()));
        }
        Ok(client)
    }

    /// Replay reads the transcript only; other modes talk to HTTP.
    pub fn from_config(config: LlmConfig) -> Result<Self, LlmError> {
        let service: Option<Box<dyn CompletionService>> = match config.mode {
            TranscriptMode::Replay => None,
            _ => Some(Box::new(HttpService::from_config(&config)?)),
        };
        LlmClient::new(config, service)
    }

    pub fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError> {
        let temperature = round3(temperature);
        let hash = prompt_hash(prompt);
        if self.config.mode == TranscriptMode::Replay {
            return self
                .replay
                .iter()
                .find(|r| r.prompt_sha256 == hash && r.model == self.config.model && r.temperature == temperature)
                .map(|r| r.completion.clone())
                .ok_or_else(|| LlmError::ReplayMiss {
                    prompt_sha256: hash,
                    model: self.config.model.clone(),
                    temperature: temperature.to_string(),
                });
        }
        let service = self.service.as_ref().expect("checked at construction");
        let request = CompletionRequest {
            model: self.config.model.clone(),
            prompt: prompt.to_string(),
            temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut attempt = 0;
        let completion = loop {
            match service.complete(&request) {
                Ok(text) => break text,
                Err(e) if attempt < self.config.retries => {
                    log::warn!("completion attempt {} failed: {e}", attempt + 1);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(recorder) = &self.recorder {
            let record = TranscriptRecord {
                prompt_sha256: hash,
                model: self.config.model.clone(),
                temperature,
                completion: completion.clone(),
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            let mut file = recorder.lock().unwrap();
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| LlmError::Transcript(e.to_string()))?;
        }
        Ok(completion)
    }
}

/// One completion at the planning temperature of `round`.
pub fn llm_complete(config: &LlmConfig, prompt: &str, round: usize) -> Result<String, LlmError> {
    LlmClient::from_config(config.clone())?.complete(prompt, config.planning.at(round))
}

/// Asks the model for a plan and reads it with [`parse_llm_plan`].
#[derive(Clone)]
pub struct LlmPlanner {
    pub client: Arc<LlmClient>,
    pub exemplars: Exemplars,
}

impl LlmPlanner {
    pub fn new(client: Arc<LlmClient>) -> Self {
        LlmPlanner {
            client,
            exemplars: Exemplars::bundled(),
        }
    }
}

impl Planner for LlmPlanner {
    fn id(&self) -> String {
        format!("llm:{}", self.client.config.model)
    }

    fn plan(&mut self, request: &PlannerRequest<'_>) -> Result<Plan, PlannerError> {
        let config = &self.client.config;
        let prompt = render_planning_prompt(request, &self.exemplars, config.exemplars);
        let text = self.client.complete(&prompt, config.planning.at(request.round))?;
        Ok(parse_llm_plan(&text, &request.problem.domain)?)
    }
}

#[cfg(test)]
mod tests {
    use std::io::Read;
    use std::net::TcpListener;

    use super::*;
    use crate::fixtures;

    #[test]
    fn gpt_schedule() {
        let s = LlmConfig::gpt_4o_mini().planning;
        let temps: Vec<f64> = (0..7).map(|r| s.at(r)).collect();
        assert_eq!(temps, [0.0, 0.1, 0.2, 0.3, 0.4, 0.4, 0.4]);
        assert_eq!(s.at(7), 0.4);
    }

    #[test]
    fn gemini_schedule() {
        let c = LlmConfig::gemini_15_flash();
        assert_eq!(c.planning.at(0), 1.0);
        assert_eq!(c.planning.at(9), 1.4);
        assert_eq!(c.validation_temperature_at(3), 2.0);
        assert_eq!(LlmConfig::gpt_4o_mini().validation_temperature_at(2), 0.2);
    }

    #[test]
    fn config_checks() {
        let mut c = LlmConfig::gpt_4o_mini();
        c.planning.cap = 2.5;
        assert!(c.check().is_err());
        let c = LlmConfig {
            mode: TranscriptMode::Replay,
            ..LlmConfig::gpt_4o_mini()
        };
        assert!(c.check().is_err());
        let parsed = LlmConfig::from_toml(
            "model = \"m\"\nmax_tokens = 10\n[planning]\nbase = 0.0\nincrement = 0.1\ncap = 0.4\n",
        )
        .unwrap();
        assert_eq!(parsed.model, "m");
        assert_eq!(parsed.exemplars, 2);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let record = LlmConfig {
            transcript: Some(path.clone()),
            mode: TranscriptMode::Record,
            ..LlmConfig::gpt_4o_mini()
        };
        let service = ScriptedService::new(vec![Ok("(pick ball1 room2)".into()), Ok("second".into())]);
        let client = LlmClient::new(record.clone(), Some(Box::new(service))).unwrap();
        assert_eq!(client.complete("p1", 0.1).unwrap(), "(pick ball1 room2)");
        assert_eq!(client.complete("p2", 0.1).unwrap(), "second");
        drop(client);

        let replay = LlmConfig {
            mode: TranscriptMode::Replay,
            ..record
        };
        let client = LlmClient::new(replay, None).unwrap();
        for _ in 0..2 {
            assert_eq!(client.complete("p1", 0.1).unwrap(), "(pick ball1 room2)");
        }
        assert!(matches!(client.complete("p1", 0.2), Err(LlmError::ReplayMiss { .. })));
        assert!(matches!(client.complete("p3", 0.1), Err(LlmError::ReplayMiss { .. })));
        let lines = read_transcript(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].prompt_sha256, prompt_hash("p1"));
    }

    #[test]
    fn retries_then_gives_up() {
        let failing = || Err(LlmError::Service("quota".into()));
        let service = ScriptedService::new(vec![failing(), Ok("ok".into())]);
        let client = LlmClient::new(LlmConfig::gpt_4o_mini(), Some(Box::new(service))).unwrap();
        assert_eq!(client.complete("p", 0.0).unwrap(), "ok");
        let config = LlmConfig {
            retries: 1,
            ..LlmConfig::gpt_4o_mini()
        };
        let service = ScriptedService::new(vec![failing()]);
        let client = LlmClient::new(config, Some(Box::new(service))).unwrap();
        assert!(matches!(client.complete("p", 0.0), Err(LlmError::Service(_))));
    }

    #[test]
    fn http_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let body = loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf).to_string();
                if let Some(end) = text.find("\r\n\r\n") {
                    let len: usize = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break (text[..end].to_string(), text[end + 4..].to_string());
                    }
                }
            };
            let reply = r#"{"completion":"(pick ball3 room1)"}"#;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            body
        });
        let service = HttpService::new(format!("http://{addr}/v1/complete"), Some("secret".into()), Duration::from_secs(5), 1);
        let request = CompletionRequest {
            model: "m".into(),
            prompt: "hello".into(),
            temperature: 0.3,
            max_tokens: 16,
        };
        assert_eq!(service.complete(&request).unwrap(), "(pick ball3 room1)");
        let (head, body) = server.join().unwrap();
        assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
        let json: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(json["model"], "m");
        assert_eq!(json["prompt"], "hello");
        assert_eq!(json["temperature"], 0.3);
        assert_eq!(json["max_tokens"], 16);
    }

    #[test]
    fn unreachable_endpoint_is_a_service_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let service = HttpService::new(format!("http://{addr}/"), None, Duration::from_secs(2), 1);
        let request = CompletionRequest {
            model: "m".into(),
            prompt: "p".into(),
            temperature: 0.0,
            max_tokens: 1,
        };
        assert!(matches!(service.complete(&request), Err(LlmError::Service(_))));
    }

    #[test]
    fn llm_planner_reads_the_completion() {
        let p = fixtures::worked_problem();
        let service = ScriptedService::new(vec![Ok("1. (move robot1 room1 room2)\n2. (pick ball1 room2)".into())]);
        let client = LlmClient::new(LlmConfig::gpt_4o_mini(), Some(Box::new(service))).unwrap();
        let mut planner = LlmPlanner::new(Arc::new(client));
        let plan = planner.plan(&PlannerRequest::new(&p)).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(planner.id(), "llm:gpt-4o-mini");
    }
}
