//! Streaming client for OpenAI-compatible chat-completion endpoints.
//!
//! Streams are consumed chunk by chunk and completion tokens are counted as
//! they arrive; the connection is dropped (which aborts the upstream request)
//! on the first chunk that brings the count to the token budget. Overshoot is
//! therefore bounded by one chunk, and is billed.
//!
//! Failures never escape as `Err`: a call that errors or times out comes back
//! as a [`Generation`] with `termination` set, so one bad candidate only
//! disqualifies itself.

mod http;
pub mod mock;
pub mod sse;

use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use futures::stream::BoxStream;
use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::config::RouterConfig;
use crate::error::ClientError;
use crate::types::{BootResponse, FullResponse, Generation, ModelSpec, Query, Termination};

pub use mock::{MockBackend, MockReply, MockScript, MockScriptFile, RecordedRequest};

pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub stream: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
}

impl ChatRequest {
    /// Single user-turn request.
    pub fn user(model_id: impl Into<String>, content: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            model_id: model_id.into(),
            messages: vec![ChatMessage::user(content)],
            max_tokens: max_tokens.max(1),
            stream: true,
            temperature: None,
        }
    }

    pub fn with_temperature(mut self, temperature: Option<f32>) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Provider-reported token usage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// One decoded stream event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamChunk {
    pub text: String,
    /// Exact token count when the source knows it (mock backend).
    pub tokens: Option<u64>,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
}

type ChunkStream = BoxStream<'static, Result<StreamChunk, String>>;

/// Client-side token estimate: whitespace-delimited words.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Tokens attributed to one streamed chunk without provider counts; any
/// non-empty chunk is at least one token.
fn chunk_tokens(chunk: &StreamChunk) -> u64 {
    match chunk.tokens {
        Some(n) => n,
        None if chunk.text.is_empty() => 0,
        None => estimate_tokens(&chunk.text).max(1),
    }
}

/// Client for hosted and mock endpoints. Cheap to clone and safe to share.
#[derive(Clone, Debug)]
pub struct ModelClient {
    http: reqwest::Client,
    mocks: Option<Arc<MockBackend>>,
}

impl ModelClient {
    pub fn new() -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| ClientError::Http(e.to_string()))?;
        Ok(Self { http, mocks: None })
    }

    pub fn with_mocks(mut self, mocks: Arc<MockBackend>) -> Self {
        self.mocks = Some(mocks);
        self
    }

    /// Client for a config, loading its mock script file if one is named.
    pub fn from_config(config: &RouterConfig) -> Result<Self, ClientError> {
        let client = Self::new()?;
        match &config.mock_scripts {
            Some(path) => Ok(client.with_mocks(Arc::new(MockBackend::load(path)?))),
            None => Ok(client),
        }
    }

    pub fn mocks(&self) -> Option<&Arc<MockBackend>> {
        self.mocks.as_ref()
    }

    async fn open(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<ChunkStream, String> {
        if let Some(script) = spec.endpoint.strip_prefix(MOCK_SCHEME) {
            let mocks = self
                .mocks
                .as_ref()
                .ok_or_else(|| format!("no mock scripts loaded for endpoint {}", spec.endpoint))?;
            let reply = mocks.resolve(script, request).map_err(|e| e.to_string())?;
            let prompt_tokens = estimate_tokens(&request.prompt_text());
            Ok(mock::reply_stream(reply, prompt_tokens))
        } else {
            http::open_stream(&self.http, spec, request).await
        }
    }

    /// Streams a completion, cancelling once `token_budget` completion tokens
    /// have been counted.
    pub async fn stream_completion(
        &self,
        spec: &ModelSpec,
        request: &ChatRequest,
        token_budget: u64,
        timeout: Duration,
    ) -> Generation {
        let mut request = request.clone();
        request.stream = true;
        self.consume(spec, request, token_budget, timeout).await
    }

    async fn consume(&self, spec: &ModelSpec, request: ChatRequest, token_budget: u64, timeout: Duration) -> Generation {
        let start = Instant::now();
        let deadline = tokio::time::Instant::now() + timeout;
        let mut out = Generation {
            model_id: spec.model_id.clone(),
            text: String::new(),
            completion_tokens: 0,
            prompt_tokens: 0,
            latency_ms: 0.0,
            termination: Termination::ModelFinished,
            error_detail: None,
            estimated: true,
        };

        let opened = tokio::time::timeout_at(deadline, self.open(spec, &request)).await;
        let mut stream = match opened {
            Err(_) => {
                out.termination = Termination::Timeout;
                out.error_detail = Some(format!("no response within {timeout:?}"));
                return finish(out, &request, None, start);
            }
            Ok(Err(e)) => {
                out.termination = Termination::Error;
                out.error_detail = Some(e);
                return finish(out, &request, None, start);
            }
            Ok(Ok(s)) => s,
        };

        let budget = token_budget.max(1);
        let mut counted = 0u64;
        let mut usage = None;
        let mut finish_reason: Option<String> = None;
        loop {
            match tokio::time::timeout_at(deadline, stream.next()).await {
                Err(_) => {
                    out.termination = Termination::Timeout;
                    out.error_detail = Some(format!("stream exceeded {timeout:?}"));
                    break;
                }
                Ok(None) => {
                    out.termination = match finish_reason.as_deref() {
                        Some("length") => Termination::BudgetReached,
                        _ => Termination::ModelFinished,
                    };
                    break;
                }
                Ok(Some(Err(e))) => {
                    out.termination = Termination::Error;
                    out.error_detail = Some(e);
                    break;
                }
                Ok(Some(Ok(chunk))) => {
                    counted += chunk_tokens(&chunk);
                    out.text.push_str(&chunk.text);
                    if chunk.usage.is_some() {
                        usage = chunk.usage;
                    }
                    if chunk.finish_reason.is_some() {
                        finish_reason = chunk.finish_reason;
                    }
                    if counted >= budget {
                        out.termination = Termination::BudgetReached;
                        break;
                    }
                }
            }
        }
        // Dropping the stream closes the connection.
        drop(stream);
        out.completion_tokens = counted;
        let usage = usage.filter(|_| out.termination != Termination::Error);
        finish(out, &request, usage, start)
    }

    /// Non-streamed call, used for selector and aggregator requests.
    pub async fn complete(&self, spec: &ModelSpec, request: &ChatRequest, timeout: Duration) -> Generation {
        if spec.endpoint.starts_with(MOCK_SCHEME) {
            // Mock replies honor max_tokens server-side and are all-or-nothing.
            let mut request = request.clone();
            request.stream = false;
            let budget = u64::from(request.max_tokens);
            let mut g = self.consume(spec, request, budget, timeout).await;
            if !g.is_usable() {
                g.text.clear();
            }
            return g;
        }
        let start = Instant::now();
        let mut request = request.clone();
        request.stream = false;
        let result = tokio::time::timeout(timeout, http::complete(&self.http, spec, &request)).await;
        let (out, usage) = match result {
            Err(_) => (
                Generation::failed(&spec.model_id, Termination::Timeout, format!("no response within {timeout:?}")),
                None,
            ),
            Ok(Err(e)) => (Generation::failed(&spec.model_id, Termination::Error, e), None),
            Ok(Ok((text, finish_reason, usage))) => {
                let termination = match finish_reason.as_deref() {
                    Some("length") => Termination::BudgetReached,
                    _ => Termination::ModelFinished,
                };
                let completion_tokens = estimate_tokens(&text);
                (
                    Generation {
                        model_id: spec.model_id.clone(),
                        text,
                        completion_tokens,
                        prompt_tokens: 0,
                        latency_ms: 0.0,
                        termination,
                        error_detail: None,
                        estimated: true,
                    },
                    usage,
                )
            }
        };
        finish(out, &request, usage, start)
    }

    /// Probes every model concurrently with a `boot_budget`-token stream.
    /// Responses come back in input order. Fails only when every probe fails.
    pub async fn dispatch_boot(
        &self,
        query: &Query,
        models: &[ModelSpec],
        boot_budget: u32,
        timeout: Duration,
        temperature: Option<f32>,
    ) -> Result<Vec<BootResponse>, ClientError> {
        if models.is_empty() {
            return Err(ClientError::NoModels);
        }
        let responses = self
            .boot_all(&query.text, models, boot_budget, timeout, temperature)
            .await;
        if responses.iter().all(|r| !r.is_usable()) {
            return Err(ClientError::AllCandidatesFailed {
                count: responses.len(),
            });
        }
        Ok(responses)
    }

    /// Like [`dispatch_boot`](Self::dispatch_boot) but never fails; used by the
    /// pipeline, which records failed probes in the trace.
    pub(crate) async fn boot_all(
        &self,
        prompt: &str,
        models: &[ModelSpec],
        boot_budget: u32,
        timeout: Duration,
        temperature: Option<f32>,
    ) -> Vec<BootResponse> {
        let calls = models.iter().map(|m| {
            let request =
                ChatRequest::user(m.model_id.clone(), prompt, boot_budget).with_temperature(temperature);
            async move {
                self.stream_completion(m, &request, u64::from(boot_budget), timeout)
                    .await
            }
        });
        join_all(calls).await
    }

    /// Full generation capped at `max_final_tokens`.
    pub async fn complete_full(
        &self,
        spec: &ModelSpec,
        request: &ChatRequest,
        max_final_tokens: u32,
        timeout: Duration,
    ) -> FullResponse {
        let mut request = request.clone();
        request.max_tokens = max_final_tokens.max(1);
        self.stream_completion(spec, &request, u64::from(max_final_tokens), timeout)
            .await
    }
}

fn finish(mut out: Generation, request: &ChatRequest, usage: Option<Usage>, start: Instant) -> Generation {
    out.latency_ms = start.elapsed().as_secs_f64() * 1e3;
    match usage {
        Some(u) => {
            out.prompt_tokens = u.prompt_tokens;
            out.completion_tokens = u.completion_tokens;
            out.estimated = false;
        }
        None => {
            out.prompt_tokens = estimate_tokens(&request.prompt_text());
            out.estimated = true;
        }
    }
    out
}
