//! Chat-model agents.
//!
//! An [`LlmPolicy`] renders a system prompt once per episode and a decision
//! prompt per turn, sends both to a chat-completions style endpoint, and
//! parses the `THINKING:` / `MESSAGE:` / `ACTION:` reply into a [`Decision`].
//! Replies that do not name an action become WAIT with `parse_ok = false`.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::policy::{Attempt, Exchange, Policy, PolicyContext};
use crate::table::{normalize_message, Action, Decision, Observation, PhilosopherId};

const BASE_RULES: &str = "\
THE DINING PHILOSOPHERS PROBLEM:
- You and your fellow philosophers share forks placed between each pair of adjacent philosophers
- To eat, you must hold BOTH your left fork AND your right fork simultaneously
- Each fork can only be held by one philosopher at a time
- After eating, you automatically release both forks

YOUR GOAL:
- Coordinate with others to avoid DEADLOCK (where everyone holds one fork and waits forever)
- Maximize total meals eaten by the group
- Ensure fair distribution of meals among all philosophers

AVAILABLE ACTIONS:
- GRAB_LEFT: Pick up the fork on your left (if available)
- GRAB_RIGHT: Pick up the fork on your right (if available)
- RELEASE: Release any forks you are holding
- WAIT: Do nothing this turn
";

const COMMUNICATION_RULES: &str = "\
COMMUNICATION:
- You can send a message to your neighbors each turn
- Use messages to coordinate and avoid conflicts
- Be concise and clear in your communication
";

const SYSTEM_FORMAT: &str = "\
RESPONSE FORMAT:
THINKING: [Brief reasoning about the current situation]
ACTION: [One of: GRAB_LEFT, GRAB_RIGHT, RELEASE, WAIT]";

const SYSTEM_FORMAT_WITH_MESSAGE: &str = "\
RESPONSE FORMAT:
THINKING: [Brief reasoning about the current situation]
MESSAGE: [Short message to your neighbors, or \"None\"]
ACTION: [One of: GRAB_LEFT, GRAB_RIGHT, RELEASE, WAIT]";

const DECISION_CLOSE: &str = "\
What is your action?

THINKING: [Your reasoning]
ACTION: [GRAB_LEFT / GRAB_RIGHT / RELEASE / WAIT]";

const DECISION_CLOSE_WITH_MESSAGE: &str = "\
What is your action? You may also send a message to coordinate.

THINKING: [Your reasoning]
MESSAGE: [Short message to neighbors, or \"None\"]
ACTION: [GRAB_LEFT / GRAB_RIGHT / RELEASE / WAIT]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub decision_prompt: String,
}

impl PromptBundle {
    pub fn render(n: usize, obs: &Observation, comms: bool) -> Self {
        PromptBundle {
            system_prompt: render_system_prompt(n, obs.self_id, comms),
            decision_prompt: render_decision_prompt(obs, comms),
        }
    }
}

/// With communication on, the communication section is added after the
/// action list and the response format gains the MESSAGE line.
pub fn render_system_prompt(n: usize, pid: PhilosopherId, comms: bool) -> String {
    let intro =
        format!("You are {pid}, one of {n} philosophers seated at a circular dining table.\n\n");
    if comms {
        format!("{intro}{BASE_RULES}\n{COMMUNICATION_RULES}\n{SYSTEM_FORMAT_WITH_MESSAGE}")
    } else {
        format!("{intro}{BASE_RULES}\n{SYSTEM_FORMAT}")
    }
}

fn holding_status(obs: &Observation) -> &'static str {
    match (obs.holds_left, obs.holds_right) {
        (false, false) => "nothing",
        (true, false) => "left fork",
        (false, true) => "right fork",
        (true, true) => "both forks",
    }
}

fn fork_status(held: bool, available: bool) -> &'static str {
    if held {
        "held by you"
    } else if available {
        "available"
    } else {
        "unavailable"
    }
}

pub fn render_decision_prompt(obs: &Observation, comms: bool) -> String {
    let mut out = format!(
        "You are {}.\n\n\
         CURRENT STATE:\n\
         - Your state: {}\n\
         - Meals eaten: {}\n\
         - Currently holding: {}\n\n\
         FORK STATUS:\n\
         - Left fork: {}\n\
         - Right fork: {}\n\n",
        obs.self_id,
        obs.status.as_str(),
        obs.meals_eaten,
        holding_status(obs),
        fork_status(obs.holds_left, obs.left_fork_available),
        fork_status(obs.holds_right, obs.right_fork_available),
    );
    if comms {
        out.push_str(&format!(
            "NEIGHBOR MESSAGES:\n\
             - From left neighbor: {}\n\
             - From right neighbor: {}\n\n",
            obs.left_message.as_deref().unwrap_or("None"),
            obs.right_message.as_deref().unwrap_or("None"),
        ));
        out.push_str(DECISION_CLOSE_WITH_MESSAGE);
    } else {
        out.push_str(DECISION_CLOSE);
    }
    out
}

/// If `line` starts with `label:` (case-insensitive, tolerating markdown
/// emphasis and brackets around the label), returns the text after the colon.
fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let decorations = |c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-' | '[' | '_' | '>');
    let rest = line.trim_start_matches(decorations);
    let head = rest.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = rest[label.len()..].trim_start_matches(['*', ']', '_', ' ']);
    rest.strip_prefix(':')
        .map(|value| value.trim_start_matches(['*', '_']))
}

fn parse_action(value: &str) -> Option<Action> {
    let cleaned = value
        .trim()
        .trim_matches(|c: char| {
            c.is_whitespace() || matches!(c, '[' | ']' | '*' | '"' | '\'' | '`')
        })
        .to_ascii_uppercase()
        .replace([' ', '-'], "_");
    Action::ALL.into_iter().find(|a| {
        cleaned.strip_prefix(a.as_str()).is_some_and(|tail| {
            tail.chars()
                .next()
                .is_none_or(|c| !(c.is_ascii_alphanumeric() || c == '_'))
        })
    })
}

/// Parses a model reply. Total: every input yields a decision.
pub fn parse_response(text: &str) -> Decision {
    let lines: Vec<&str> = text.lines().collect();
    let action = lines
        .iter()
        .rev()
        .find_map(|l| labelled(l, "ACTION"))
        .and_then(parse_action);
    let message = lines
        .iter()
        .rev()
        .find_map(|l| labelled(l, "MESSAGE"))
        .map(|m| {
            m.trim()
                .trim_matches(|c: char| matches!(c, '[' | ']' | '"' | '*'))
                .to_string()
        });

    let thinking = match lines.iter().position(|l| labelled(l, "THINKING").is_some()) {
        Some(start) => {
            let mut parts = vec![labelled(lines[start], "THINKING").unwrap_or_default()];
            parts.extend(
                lines[start + 1..]
                    .iter()
                    .take_while(|l| {
                        labelled(l, "MESSAGE").is_none() && labelled(l, "ACTION").is_none()
                    })
                    .copied(),
            );
            parts.join("\n").trim().to_string()
        }
        None => text.trim().to_string(),
    };

    let decision = match action {
        Some(a) => Decision::new(a).with_thinking(thinking),
        None => Decision::unparsed(thinking),
    };
    Decision {
        message: normalize_message(message.as_deref()),
        ..decision
    }
}

/// Endpoint settings. The API key itself is read from `api_key_env` at
/// connection time and never stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub api_key_env: String,
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// Delay before the first retry; doubled on each further retry.
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-5.2-2025-12-11".into(),
            temperature: 0.7,
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout: Duration::from_secs(120),
            backoff_base: Duration::from_millis(500),
            max_tokens: None,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// API usage totals for a run. Retries count as calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAccounting {
    pub calls: u64,
    pub total_tokens: u64,
    pub latency_ms_sum: u64,
    pub parse_failures: u64,
}

impl CallAccounting {
    pub fn avg_latency_ms(&self) -> Option<f64> {
        (self.calls > 0).then(|| self.latency_ms_sum as f64 / self.calls as f64)
    }

    pub fn record_attempt(&mut self, attempt: &Attempt) {
        self.calls += 1;
        self.total_tokens += attempt.tokens;
        self.latency_ms_sum += attempt.latency_ms;
    }

    pub fn merge(&mut self, other: &CallAccounting) {
        self.calls += other.calls;
        self.total_tokens += other.total_tokens;
        self.latency_ms_sum += other.latency_ms_sum;
        self.parse_failures += other.parse_failures;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub total_tokens: u64,
    pub latency_ms: u64,
    /// Response body as received.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatFailure {
    /// Rate limiting, server errors and transport failures are retryable.
    pub retryable: bool,
    pub message: String,
    pub latency_ms: u64,
}

/// One round trip to a chat model.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatReply, ChatFailure>;
}

/// Extracts the first choice's content and the usage total from a
/// chat-completions response body.
pub fn decode_completion(body: &str) -> (String, u64) {
    let Ok(value) = serde_json::from_str::<serde_json::Value>(body) else {
        return (String::new(), 0);
    };
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let usage = &value["usage"];
    let tokens = usage["total_tokens"].as_u64().unwrap_or_else(|| {
        usage["prompt_tokens"].as_u64().unwrap_or(0)
            + usage["completion_tokens"].as_u64().unwrap_or(0)
    });
    (content, tokens)
}

/// Blocking HTTP client for `POST {base_url}/chat/completions`.
pub struct HttpChatBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("url", &self.url)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpChatBackend {
    pub fn new(config: &LlmEndpointConfig, api_key: String) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        HttpChatBackend {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        }
    }

    /// Reads the key from the configured environment variable.
    pub fn from_env(config: &LlmEndpointConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| Error::MissingApiKey(config.api_key_env.clone()))?;
        Ok(Self::new(config, key))
    }

    pub fn api_key(&self) -> &str {
        &self.api_key
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatReply, ChatFailure> {
        let started = Instant::now();
        let response = self
            .agent
            .post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_json(json!(request));
        let elapsed = || started.elapsed().as_millis() as u64;
        match response {
            Ok(resp) => {
                let raw = resp.into_string().map_err(|e| ChatFailure {
                    retryable: true,
                    message: format!("reading response body: {e}"),
                    latency_ms: elapsed(),
                })?;
                let (content, total_tokens) = decode_completion(&raw);
                Ok(ChatReply {
                    content,
                    total_tokens,
                    latency_ms: elapsed(),
                    raw,
                })
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                Err(ChatFailure {
                    retryable: code == 429 || code >= 500,
                    message: format!("HTTP {code}: {body}"),
                    latency_ms: elapsed(),
                })
            }
            Err(ureq::Error::Transport(t)) => Err(ChatFailure {
                retryable: true,
                message: t.to_string(),
                latency_ms: elapsed(),
            }),
        }
    }
}

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "<redacted>"),
        _ => text.to_string(),
    }
}

/// Accounting shared by every philosopher of a run.
pub type SharedAccounting = Arc<Mutex<CallAccounting>>;

/// A [`Policy`] backed by a chat model.
pub struct LlmPolicy {
    config: LlmEndpointConfig,
    backend: Arc<dyn ChatBackend>,
    accounting: SharedAccounting,
    secret: Option<String>,
    system_prompt: Option<String>,
    last_exchange: Option<Exchange>,
}

impl LlmPolicy {
    pub fn new(
        config: LlmEndpointConfig,
        backend: Arc<dyn ChatBackend>,
        accounting: SharedAccounting,
    ) -> Self {
        LlmPolicy {
            config,
            backend,
            accounting,
            secret: None,
            system_prompt: None,
            last_exchange: None,
        }
    }

    /// Text scrubbed from everything this policy logs.
    pub fn with_secret(mut self, secret: impl Into<String>) -> Self {
        self.secret = Some(secret.into());
        self
    }

    fn request(&mut self, obs: &Observation, ctx: &PolicyContext) -> ChatRequest {
        let episode = ctx.episode;
        let system = self
            .system_prompt
            .get_or_insert_with(|| render_system_prompt(episode.n, obs.self_id, episode.comms))
            .clone();
        ChatRequest {
            model: self.config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system,
                },
                ChatMessage {
                    role: "user".into(),
                    content: render_decision_prompt(obs, episode.comms),
                },
            ],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    /// Sends the prompts, retrying retryable failures with exponential
    /// backoff, and parses the reply.
    pub fn llm_decide(&mut self, obs: &Observation, ctx: &PolicyContext) -> Result<Decision> {
        let request = self.request(obs, ctx);
        let request_text = redact(&serde_json::to_string(&request)?, self.secret.as_deref());
        let mut exchange = Exchange {
            request: request_text,
            attempts: Vec::new(),
        };
        let max_attempts = self.config.max_retries + 1;

        for attempt_no in 0..max_attempts {
            let outcome = self.backend.complete(&request);
            let attempt = match &outcome {
                Ok(reply) => Attempt {
                    response: Some(redact(&reply.raw, self.secret.as_deref())),
                    error: None,
                    latency_ms: reply.latency_ms,
                    tokens: reply.total_tokens,
                },
                Err(failure) => Attempt {
                    response: None,
                    error: Some(redact(&failure.message, self.secret.as_deref())),
                    latency_ms: failure.latency_ms,
                    tokens: 0,
                },
            };
            self.lock_accounting().record_attempt(&attempt);
            exchange.attempts.push(attempt);

            match outcome {
                Ok(reply) => {
                    let decision = parse_response(&reply.content);
                    if !decision.parse_ok {
                        self.lock_accounting().parse_failures += 1;
                    }
                    self.last_exchange = Some(exchange);
                    return Ok(decision);
                }
                Err(failure) if failure.retryable && attempt_no + 1 < max_attempts => {
                    let delay = self
                        .config
                        .backoff_base
                        .saturating_mul(1 << attempt_no.min(16));
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(failure) => {
                    self.last_exchange = Some(exchange);
                    return Err(Error::Transport {
                        philosopher: obs.self_id.0,
                        timestep: ctx.timestep,
                        attempts: attempt_no + 1,
                        message: redact(&failure.message, self.secret.as_deref()),
                    });
                }
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    fn lock_accounting(&self) -> std::sync::MutexGuard<'_, CallAccounting> {
        self.accounting.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> &str {
        "llm"
    }

    fn decide(&mut self, obs: &Observation, ctx: &mut PolicyContext) -> Result<Decision> {
        self.llm_decide(obs, ctx)
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn take_exchange(&mut self) -> Option<Exchange> {
        self.last_exchange.take()
    }
}
