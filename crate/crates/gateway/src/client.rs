use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use inco_core::reward::RewardScore;
use inco_core::{Response, SamplingConfig, Segment, Source, Strategy};

use crate::endpoint::EndpointDescriptor;
use crate::error::{GatewayError, Result};
use crate::log::{LogEntry, Outcome, RequestLog};

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    seed: u64,
    logprobs: u32,
}

#[derive(Debug, Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    completion_tokens: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    response: &'a str,
}

/// HTTP client for one endpoint, with bounded concurrency, retries and a
/// request log. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct Gateway {
    ep: EndpointDescriptor,
    http: reqwest::Client,
    token: Option<String>,
    permits: Arc<Semaphore>,
    log: RequestLog,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(ep: EndpointDescriptor) -> Result<Self> {
        Self::with_log(ep, RequestLog::new())
    }

    pub fn with_log(ep: EndpointDescriptor, log: RequestLog) -> Result<Self> {
        ep.validate()?;
        let token = ep.token()?;
        let http = reqwest::Client::builder()
            .timeout(ep.timeout())
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            permits: Arc::new(Semaphore::new(ep.max_concurrent)),
            ep,
            http,
            token,
            log,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn endpoint(&self) -> &EndpointDescriptor {
        &self.ep
    }

    pub fn log(&self) -> &RequestLog {
        &self.log
    }

    /// POSTs `body` with retries; returns the request id and response text.
    async fn post<B: Serialize>(&self, kind: &str, path: &str, body: &B) -> Result<(u64, String)> {
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let _permit = self.permits.acquire().await.expect("semaphore closed");
        let url = self.ep.url(path);
        let attempts = self.ep.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let start = Instant::now();
            let mut req = self.http.post(&url).json(body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let mut entry = LogEntry {
                request_id,
                kind: kind.to_string(),
                attempt,
                outcome: Outcome::Ok,
                status: None,
                error: None,
                elapsed_ms: 0,
            };
            let failure = match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    entry.status = Some(status.as_u16());
                    if status.is_success() {
                        match resp.text().await {
                            Ok(text) => {
                                entry.elapsed_ms = start.elapsed().as_millis() as u64;
                                self.log.record(entry);
                                return Ok((request_id, text));
                            }
                            Err(e) => e.to_string(),
                        }
                    } else if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
                        format!("http status {status}")
                    } else {
                        let message = format!("http status {status}");
                        entry.outcome = Outcome::Failed;
                        entry.error = Some(message.clone());
                        entry.elapsed_ms = start.elapsed().as_millis() as u64;
                        self.log.record(entry);
                        return Err(GatewayError::Protocol { request_id, message });
                    }
                }
                Err(e) => e.to_string(),
            };
            entry.elapsed_ms = start.elapsed().as_millis() as u64;
            entry.error = Some(failure.clone());
            last_error = failure;
            if attempt < attempts {
                entry.outcome = Outcome::Retry;
                self.log.record(entry);
                tokio::time::sleep(self.ep.backoff(attempt)).await;
            } else {
                entry.outcome = Outcome::Failed;
                self.log.record(entry);
            }
        }
        Err(GatewayError::Exhausted {
            request_id,
            attempts,
            message: last_error,
        })
    }

    /// Raw completion of `prompt_text ‖ prefix_text`. With a non-empty
    /// prefix the response text starts with it, recorded as an EXTERNAL
    /// character span followed by the generated POLICY span.
    pub async fn complete(&self, prompt_text: &str, prefix_text: Option<&str>, cfg: &SamplingConfig) -> Result<Response> {
        cfg.validate()?;
        let prefix = prefix_text.unwrap_or("");
        let prompt = self.ep.wrap(prompt_text, prefix);
        let body = CompletionRequest {
            model: &self.ep.model,
            prompt: &prompt,
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            seed: cfg.seed,
            logprobs: 1,
        };
        let (request_id, text) = self.post("complete", &self.ep.completion_path, &body).await?;
        let protocol = |message: String| GatewayError::Protocol { request_id, message };
        let parsed: CompletionBody = serde_json::from_str(&text).map_err(|e| protocol(format!("malformed completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| protocol("completion has no choices".into()))?;
        let logprobs = match choice.logprobs {
            Some(lp) if !lp.token_logprobs.is_empty() => Some(
                lp.token_logprobs
                    .into_iter()
                    .map(|v| v.filter(|x| x.is_finite() && *x <= 0.0))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| protocol("invalid token logprob".into()))?,
            ),
            _ => None,
        };
        build_response(prefix, &choice.text, choice.finish_reason.as_deref(), logprobs, parsed.usage.and_then(|u| u.completion_tokens), cfg)
            .ok_or_else(|| protocol("empty completion".into()))
    }

    pub async fn score(&self, prompt_text: &str, response_text: &str) -> Result<RewardScore> {
        let body = ScoreRequest {
            model: &self.ep.model,
            prompt: prompt_text,
            response: response_text,
        };
        let (request_id, text) = self.post("score", &self.ep.score_path, &body).await?;
        let protocol = |message: String| GatewayError::Protocol { request_id, message };
        let value: Value = serde_json::from_str(&text).map_err(|e| protocol(format!("malformed score body: {e}")))?;
        let score = value
            .get("score")
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| protocol(format!("non-numeric score in {text}")))?;
        Ok(RewardScore {
            value: score,
            model_id: self.ep.model.clone(),
            partial_at: None,
        })
    }

    /// Scores every (prompt, response) pair concurrently, results aligned
    /// with the input order.
    pub async fn score_batch(&self, items: &[(String, String)]) -> Vec<Result<RewardScore>> {
        let futures = items.iter().map(|(p, r)| self.score(p, r));
        futures::future::join_all(futures).await
    }

    /// Completes every (prompt, prefix) pair concurrently; sample `i` uses
    /// seed `cfg.seed + i`. Results are aligned with the input order.
    pub async fn complete_batch(&self, items: &[(String, Option<String>)], cfg: &SamplingConfig) -> Vec<Result<Response>> {
        let futures = items.iter().enumerate().map(|(i, (p, prefix))| {
            let cfg = cfg.with_seed(cfg.seed.wrapping_add(i as u64));
            async move { self.complete(p, prefix.as_deref(), &cfg).await }
        });
        futures::future::join_all(futures).await
    }
}

fn build_response(
    prefix: &str,
    completion: &str,
    finish_reason: Option<&str>,
    logprobs: Option<Vec<f64>>,
    completion_tokens: Option<usize>,
    cfg: &SamplingConfig,
) -> Option<Response> {
    let text = format!("{prefix}{completion}");
    let p = prefix.chars().count();
    let n = text.chars().count();
    if n == 0 {
        return None;
    }
    let mut segments = Vec::new();
    if p > 0 {
        segments.push(Segment::new(Source::External, 0, p));
    }
    if n > p {
        segments.push(Segment::new(Source::Policy, p, n));
    }
    let remote_token_count = completion_tokens.or(logprobs.as_ref().map(Vec::len));
    Some(Response {
        tokens: Vec::new(),
        text: Some(text),
        remote_token_count,
        segments,
        per_token_logprob: logprobs,
        strategy: if p > 0 { Strategy::Continuation } else { Strategy::OnPolicy },
        sampling_config_id: cfg.with_prefix_len(p).id(),
        truncated: finish_reason == Some("length") || n == p,
    })
}

/// Completion through `gw`; see [`Gateway::complete`].
pub async fn remote_complete(gw: &Gateway, prompt_text: &str, prefix_text: Option<&str>, cfg: &SamplingConfig) -> Result<Response> {
    gw.complete(prompt_text, prefix_text, cfg).await
}

/// Scalar reward through `gw`; see [`Gateway::score`].
pub async fn remote_score(gw: &Gateway, prompt_text: &str, response_text: &str) -> Result<RewardScore> {
    gw.score(prompt_text, response_text).await
}
