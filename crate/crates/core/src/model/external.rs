//! Adapter contract for hosted text models.
//!
//! No network client ships with the crate; implement [`TextEndpoint`] to
//! plug one in. The prefix is rendered as a marker-per-line transcript and
//! the reply is parsed back with the same convention.

use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng as _;
use thiserror::Error;

use super::SessionModel;
use crate::session::{
    detokenize, detokenize_code, is_special, is_terminal, tokenize, tokenize_code, TokenSeq, NEWLINE, USER,
};
use crate::util::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: usize,
    /// Endpoints that support seeded sampling should honor this.
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("request timed out")]
    Timeout,
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint rejected the request: {0}")]
    Fatal(String),
}

pub trait TextEndpoint: Send + Sync + 'static {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, EndpointError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct ExternalModel<E: TextEndpoint> {
    endpoint: Arc<E>,
    policy: RetryPolicy,
}

impl<E: TextEndpoint> ExternalModel<E> {
    pub fn new(endpoint: E, policy: RetryPolicy) -> Self {
        Self { endpoint: Arc::new(endpoint), policy }
    }

    fn call_once(&self, prompt: &str, params: &CompletionParams) -> Result<String, EndpointError> {
        let (tx, rx) = mpsc::channel();
        let ep = Arc::clone(&self.endpoint);
        let prompt = prompt.to_owned();
        let params = params.clone();
        std::thread::spawn(move || {
            let _ = tx.send(ep.complete(&prompt, &params));
        });
        match rx.recv_timeout(self.policy.timeout) {
            Ok(r) => r,
            Err(_) => Err(EndpointError::Timeout),
        }
    }

    /// Calls the endpoint, retrying timeouts and transient failures with a
    /// linear backoff.
    pub fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, EndpointError> {
        let mut last = EndpointError::Fatal("no attempts configured".into());
        for attempt in 0..self.policy.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.policy.backoff * attempt as u32);
            }
            match self.call_once(prompt, params) {
                Ok(text) => return Ok(text),
                Err(e @ EndpointError::Fatal(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

impl<E: TextEndpoint> SessionModel for ExternalModel<E> {
    /// Endpoint failures yield an empty continuation, which the decoder
    /// reports as a missing code span.
    fn sample_rollout(&self, prefix: &[String], temperature: f64, max_tokens: usize, rng: &mut Rng) -> TokenSeq {
        let params = CompletionParams { temperature, max_tokens, seed: rng.random() };
        match self.complete(&render_transcript(prefix), &params) {
            Ok(reply) => {
                let mut out = TokenSeq::new();
                for t in parse_transcript(&reply).0.into_iter().take(max_tokens) {
                    let stop = is_terminal(&t);
                    out.push(t);
                    if stop {
                        break;
                    }
                }
                out
            }
            Err(_) => TokenSeq::new(),
        }
    }
}

/// Renders tokens as text with each marker on its own line.
pub fn render_transcript(tokens: &[String]) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut in_code = true;
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, lines: &mut Vec<String>, code: bool| {
        if !run.is_empty() {
            lines.push(if code { detokenize_code(run) } else { detokenize(run) });
            run.clear();
        }
    };
    for t in tokens {
        if is_special(t) && t != NEWLINE {
            flush(&mut run, &mut lines, in_code);
            lines.push(t.clone());
            in_code = t != USER;
        } else {
            run.push(t.clone());
        }
    }
    flush(&mut run, &mut lines, in_code);
    lines.join("\n")
}

/// Inverse of [`render_transcript`]. Text before the first marker is read as
/// code, since a reply usually starts mid-turn.
pub fn parse_transcript(text: &str) -> TokenSeq {
    let mut out = TokenSeq::new();
    let mut in_code = true;
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, out: &mut TokenSeq, code: bool| {
        if !block.is_empty() {
            let joined = block.join("\n");
            let toks = if code { tokenize_code(&joined) } else { tokenize(&joined) };
            out.extend_from(&toks);
            block.clear();
        }
    };
    for line in text.lines() {
        let l = line.trim();
        if is_special(l) && l != NEWLINE {
            flush(&mut block, &mut out, in_code);
            out.push(l);
            in_code = l != USER;
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut out, in_code);
    out
}
