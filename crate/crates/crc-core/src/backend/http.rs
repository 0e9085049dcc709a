//! Chat-completion HTTP transport with retry, backoff, and rate limiting.
//!
//! Greedy decoding is expressed as temperature 0. Transient failures
//! (transport errors, 429, 5xx) are retried with exponential backoff up to
//! the configured retry budget; other statuses fail immediately.

use std::time::Duration;

use super::limiter::{Clock, RateLimiter};
use super::{BackendConfig, BackendError, HttpParams, WireProtocol};

const MAX_BACKOFF: Duration = Duration::from_secs(30);
const BODY_SNIPPET: usize = 200;

fn request_body(params: &HttpParams, config: &BackendConfig, prompt: &str) -> String {
    let body = match params.wire {
        WireProtocol::ChatCompletions => serde_json::json!({
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": config.max_new_tokens,
        }),
        WireProtocol::Completions => serde_json::json!({
            "model": config.model_name,
            "prompt": prompt,
            "temperature": 0,
            "max_tokens": config.max_new_tokens,
        }),
    };
    body.to_string()
}

fn extract_output(params: &HttpParams, body: &str) -> Result<String, BackendError> {
    let snippet = || body.chars().take(BODY_SNIPPET).collect::<String>();
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|_| BackendError::MalformedResponse(snippet()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse(snippet()))?;
    let text = match params.wire {
        WireProtocol::ChatCompletions => choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(|t| t.as_str()),
        WireProtocol::Completions => choice.get("text").and_then(|t| t.as_str()),
    };
    text.map(str::to_string)
        .ok_or_else(|| BackendError::MalformedResponse(snippet()))
}

enum AttemptError {
    Transient(String),
    Fatal(BackendError),
}

fn attempt(
    agent: &ureq::Agent,
    params: &HttpParams,
    config: &BackendConfig,
    prompt: &str,
) -> Result<String, AttemptError> {
    let body = request_body(params, config, prompt);
    let mut request = agent
        .post(&params.endpoint)
        .header("content-type", "application/json");
    if let Some(env_name) = &params.api_key_env {
        let key = std::env::var(env_name)
            .map_err(|_| AttemptError::Fatal(BackendError::MissingCredential(env_name.clone())))?;
        request = request.header("authorization", format!("Bearer {key}"));
    }

    let mut response = request
        .send(body.as_str())
        .map_err(|e| AttemptError::Transient(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| AttemptError::Transient(e.to_string()))?;

    if (200..300).contains(&status) {
        extract_output(params, &text).map_err(AttemptError::Fatal)
    } else if status == 429 || (500..600).contains(&status) {
        Err(AttemptError::Transient(format!("status {status}")))
    } else {
        Err(AttemptError::Fatal(BackendError::HttpStatus {
            status,
            body: text.chars().take(BODY_SNIPPET).collect(),
        }))
    }
}

/// Issue the request, retrying transient failures. Returns the output and
/// the number of attempts made; on exhausted retries the error carries
/// `max_retries + 1` attempts.
pub(super) fn generate(
    agent: &ureq::Agent,
    params: &HttpParams,
    config: &BackendConfig,
    limiter: Option<&RateLimiter>,
    clock: &dyn Clock,
    prompt: &str,
) -> Result<(String, u32), BackendError> {
    let mut attempts = 0u32;
    loop {
        if let Some(limiter) = limiter {
            // Every wire request, including retries, consumes a slot.
            let waited = limiter.acquire(clock);
            if waited > config.timeout {
                return Err(BackendError::RateLimitExhausted);
            }
        }
        attempts += 1;
        match attempt(agent, params, config, prompt) {
            Ok(output) => return Ok((output, attempts)),
            Err(AttemptError::Fatal(err)) => return Err(err),
            Err(AttemptError::Transient(detail)) => {
                if attempts > config.max_retries {
                    return Err(BackendError::Network { attempts, detail });
                }
                let shift = (attempts - 1).min(16);
                let backoff = config
                    .initial_backoff
                    .saturating_mul(1u32 << shift)
                    .min(MAX_BACKOFF);
                clock.sleep(backoff);
            }
        }
    }
}
