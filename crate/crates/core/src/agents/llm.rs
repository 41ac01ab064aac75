//! Chat-completions backend.
//!
//! Request body (POST to `endpoint_url`):
//!
//! ```json
//! {"model": "<model_name>", "messages": [{"role": "user", "content": "<prompt>"}], "temperature": 0.1}
//! ```
//!
//! The reply is read from `choices[0].message.content`. A bearer token is
//! sent when the environment variable named by `auth_token_env_var` is set.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{parse_rating, render_prompt, AgentContext, AgentError, RatingAgent};
use crate::model::{LlmBackendConfig, RatingScale, Scenario};

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Append-only JSONL log of every request/response pair.
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    fn append(&self, entry: &serde_json::Value) -> std::io::Result<()> {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        serde_json::to_writer(&mut *out, entry)?;
        out.write_all(b"\n")?;
        out.flush()
    }
}

/// Counting gate on concurrent requests.
struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightGuard { gate: self }
    }
}

struct InFlightGuard<'a> {
    gate: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

enum Attempt {
    Reply(String),
    Retryable(String),
}

pub struct LlmClient {
    cfg: LlmBackendConfig,
    agent: ureq::Agent,
    token: Option<String>,
    audit: Option<AuditLog>,
    gate: InFlight,
}

impl LlmClient {
    pub fn new(cfg: LlmBackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&cfg.auth_token_env_var)
            .ok()
            .filter(|t| !t.is_empty());
        let cap = cfg.max_in_flight.max(1);
        LlmClient {
            cfg,
            agent,
            token,
            audit: None,
            gate: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                cap,
            },
        }
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn config(&self) -> &LlmBackendConfig {
        &self.cfg
    }

    fn send(
        &self,
        prompt: &str,
        seed: u64,
        sample: usize,
        attempt: u32,
    ) -> Result<Attempt, AgentError> {
        let body = ChatRequest {
            model: &self.cfg.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.cfg.temperature,
        };
        let payload = serde_json::to_string(&body).expect("request serializes");
        let mut request = self
            .agent
            .post(&self.cfg.endpoint_url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let result = {
            let _slot = self.gate.acquire();
            request.send(payload.as_str()).and_then(|mut resp| {
                let status = resp.status().as_u16();
                resp.body_mut().read_to_string().map(|text| (status, text))
            })
        };

        if let Some(audit) = &self.audit {
            let (status, response) = match &result {
                Ok((status, text)) => (Some(*status), json!(text)),
                Err(e) => (None, json!({ "error": e.to_string() })),
            };
            audit.append(&json!({
                "seed": seed,
                "sample": sample,
                "attempt": attempt,
                "request": body,
                "status": status,
                "response": response,
            }))?;
        }

        let (status, text) = match result {
            Ok(pair) => pair,
            Err(e) => return Ok(Attempt::Retryable(e.to_string())),
        };
        match status {
            200..=299 => {}
            401 | 403 => return Err(AgentError::Auth { status }),
            _ => return Ok(Attempt::Retryable(format!("HTTP {status}: {text}"))),
        }
        match serde_json::from_str::<ChatResponse>(&text) {
            Ok(reply) => match reply
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
            {
                Some(content) => Ok(Attempt::Reply(content)),
                None => Ok(Attempt::Retryable(
                    "response has no choices[0].message.content".into(),
                )),
            },
            Err(e) => Ok(Attempt::Retryable(format!("malformed response body: {e}"))),
        }
    }

    /// One parsed rating, retrying transport failures and unparseable
    /// replies up to `max_retries` times each.
    fn sample(
        &self,
        prompt: &str,
        scale: RatingScale,
        seed: u64,
        sample: usize,
    ) -> Result<u32, AgentError> {
        let max_retries = self.cfg.max_retries;
        let mut transport_failures = 0u32;
        let mut parse_failures = 0u32;
        let mut attempt = 0u32;
        loop {
            match self.send(prompt, seed, sample, attempt)? {
                Attempt::Retryable(message) => {
                    transport_failures += 1;
                    if transport_failures > max_retries {
                        return Err(AgentError::Transport {
                            attempts: transport_failures,
                            message,
                        });
                    }
                }
                Attempt::Reply(text) => match parse_rating(&text, scale) {
                    Ok(rating) => return Ok(rating),
                    Err(_) => {
                        parse_failures += 1;
                        if parse_failures > max_retries {
                            return Err(AgentError::Parse {
                                attempts: parse_failures,
                                last: text,
                            });
                        }
                    }
                },
            }
            attempt += 1;
        }
    }
}

/// Requests `n_samples` independent ratings for `prompt`, in order.
pub fn llm_rate(
    client: &LlmClient,
    prompt: &str,
    n_samples: usize,
    seed: u64,
    scale: RatingScale,
) -> Result<Vec<u32>, AgentError> {
    (0..n_samples)
        .map(|s| client.sample(prompt, scale, seed, s))
        .collect()
}

/// Language-model agent: renders the scenario prompt and samples the client.
pub struct LlmAgent {
    client: LlmClient,
}

impl LlmAgent {
    pub fn new(client: LlmClient) -> Self {
        LlmAgent { client }
    }
}

impl RatingAgent for LlmAgent {
    fn backend_id(&self) -> String {
        "llm".into()
    }

    fn rate(
        &self,
        ctx: &AgentContext<'_>,
        scenario: Scenario,
        n_samples: usize,
    ) -> Result<Vec<u32>, AgentError> {
        let prompt = render_prompt(ctx, scenario)?;
        llm_rate(&self.client, &prompt, n_samples, ctx.rng_seed, ctx.scale)
    }
}
