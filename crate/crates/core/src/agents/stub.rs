//! Scripted chat-completions server for offline testing of the LLM path.
//!
//! Script format, one rule per line (`#` starts a comment):
//!
//! ```text
//! always: 8
//! count: 3 => I'd say 7/10
//! regex: Character Profile => 9
//! regex: Title: Broken Movie => !503
//! ```
//!
//! `count` rules match the n-th request received (1-based) and take
//! precedence, then `regex` rules in file order against the user prompt,
//! then the single `always` rule. A reply of the form `!<status>` answers
//! with that HTTP status instead of a completion.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;
use tiny_http::{Header, Response, Server};

#[derive(Debug, Error)]
pub enum StubError {
    #[error("script line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Text(String),
    Status(u16),
}

#[derive(Debug, Clone)]
pub struct StubScript {
    counts: Vec<(usize, Reply)>,
    patterns: Vec<(Regex, Reply)>,
    always: Option<Reply>,
}

fn parse_reply(raw: &str, line: usize) -> Result<Reply, StubError> {
    let raw = raw.trim();
    match raw.strip_prefix('!') {
        Some(code) => code
            .parse::<u16>()
            .ok()
            .filter(|c| (100..=599).contains(c))
            .map(Reply::Status)
            .ok_or_else(|| StubError::Malformed {
                line,
                reason: format!("bad status reply {raw:?}"),
            }),
        None => Ok(Reply::Text(raw.to_string())),
    }
}

fn split_rule(rest: &str, line: usize) -> Result<(&str, &str), StubError> {
    rest.split_once("=>")
        .map(|(lhs, rhs)| (lhs.trim(), rhs))
        .ok_or_else(|| StubError::Malformed {
            line,
            reason: "expected '<match> => <reply>'".into(),
        })
}

impl StubScript {
    pub fn parse(text: &str) -> Result<Self, StubError> {
        let mut script = StubScript {
            counts: Vec::new(),
            patterns: Vec::new(),
            always: None,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (keyword, rest) = trimmed
                .split_once(':')
                .ok_or_else(|| StubError::Malformed {
                    line,
                    reason: format!("expected 'always:', 'count:' or 'regex:', got {trimmed:?}"),
                })?;
            match keyword.trim() {
                "always" => {
                    if script.always.is_some() {
                        return Err(StubError::Malformed {
                            line,
                            reason: "duplicate 'always' rule".into(),
                        });
                    }
                    script.always = Some(parse_reply(rest, line)?);
                }
                "count" => {
                    let (n, reply) = split_rule(rest, line)?;
                    let n = n.parse::<usize>().ok().filter(|n| *n >= 1).ok_or_else(|| {
                        StubError::Malformed {
                            line,
                            reason: format!("bad request number {n:?}"),
                        }
                    })?;
                    script.counts.push((n, parse_reply(reply, line)?));
                }
                "regex" => {
                    let (pattern, reply) = split_rule(rest, line)?;
                    let re = Regex::new(pattern).map_err(|e| StubError::Malformed {
                        line,
                        reason: e.to_string(),
                    })?;
                    script.patterns.push((re, parse_reply(reply, line)?));
                }
                other => {
                    return Err(StubError::Malformed {
                        line,
                        reason: format!("unknown rule kind {other:?}"),
                    })
                }
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, StubError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn respond(&self, request_no: usize, prompt: &str) -> Option<&Reply> {
        self.counts
            .iter()
            .find(|(n, _)| *n == request_no)
            .map(|(_, r)| r)
            .or_else(|| {
                self.patterns
                    .iter()
                    .find(|(re, _)| re.is_match(prompt))
                    .map(|(_, r)| r)
            })
            .or(self.always.as_ref())
    }
}

/// A running stub server. Dropping it stops the workers.
pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
}

impl StubServer {
    /// Binds `host:port` (port 0 picks a free port) and starts `workers`
    /// handler threads.
    pub fn start(
        host: &str,
        port: u16,
        script: StubScript,
        workers: usize,
    ) -> Result<Self, StubError> {
        let bind = format!("{host}:{port}");
        let server = Server::http(&bind).map_err(|e| StubError::Bind {
            addr: bind.clone(),
            reason: e.to_string(),
        })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| StubError::Bind {
                addr: bind,
                reason: "not an IP listener".into(),
            })?;
        let server = Arc::new(server);
        let script = Arc::new(script);
        let requests = Arc::new(AtomicUsize::new(0));
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let script = Arc::clone(&script);
                let requests = Arc::clone(&requests);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handle(request, &script, &requests);
                    }
                })
            })
            .collect();
        Ok(StubServer {
            server,
            addr,
            workers,
            requests,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server is stopped from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header =
        Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header)
}

fn handle(mut request: tiny_http::Request, script: &StubScript, requests: &AtomicUsize) {
    let request_no = requests.fetch_add(1, Ordering::SeqCst) + 1;
    let mut body = String::new();
    let parsed = request
        .as_reader()
        .read_to_string(&mut body)
        .ok()
        .and_then(|_| serde_json::from_str::<Value>(&body).ok());
    let response = match parsed {
        None => json_response(
            400,
            json!({"error": {"message": "request body is not JSON"}}),
        ),
        Some(req) => {
            let prompt = req["messages"]
                .as_array()
                .and_then(|msgs| msgs.iter().rev().find(|m| m["role"] == "user"))
                .and_then(|m| m["content"].as_str())
                .unwrap_or("");
            match script.respond(request_no, prompt) {
                Some(Reply::Text(text)) => json_response(
                    200,
                    json!({
                        "id": format!("stub-{request_no}"),
                        "object": "chat.completion",
                        "created": 0,
                        "model": req["model"],
                        "choices": [{
                            "index": 0,
                            "message": {"role": "assistant", "content": text},
                            "finish_reason": "stop"
                        }]
                    }),
                ),
                Some(Reply::Status(code)) => json_response(
                    *code,
                    json!({"error": {"message": format!("scripted status {code}")}}),
                ),
                None => json_response(500, json!({"error": {"message": "no stub rule matched"}})),
            }
        }
    };
    let _ = request.respond(response);
}
