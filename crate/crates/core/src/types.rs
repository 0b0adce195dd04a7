//! Domain types shared by the client, selector, aggregator and pipeline.

use std::collections::BTreeSet;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::config::RouterConfig;
use crate::cost::CostLedger;

/// One candidate endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    /// Base URL of an OpenAI-compatible service, or `mock://<script>`.
    pub endpoint: String,
    /// Currency per 10⁶ tokens (prompt and completion billed alike).
    pub price_per_million_tokens: Decimal,
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    /// Model name sent on the wire; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>, price: Decimal) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            price_per_million_tokens: price,
            capabilities: BTreeSet::new(),
            display_name: None,
            upstream_model: None,
            api_key_env: None,
        }
    }

    pub fn with_capabilities<I, S>(mut self, caps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.capabilities = caps.into_iter().map(Into::into).collect();
        self
    }

    pub fn wire_model(&self) -> &str {
        self.upstream_model.as_deref().unwrap_or(&self.model_id)
    }

    pub fn label(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.model_id)
    }
}

/// A user query routed through the pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    #[serde(default)]
    pub required_capabilities: BTreeSet<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
            required_capabilities: BTreeSet::new(),
        }
    }

    pub fn requiring<I, S>(mut self, caps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_capabilities = caps.into_iter().map(Into::into).collect();
        self
    }
}

/// Why a generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BudgetReached,
    ModelFinished,
    Error,
    Timeout,
}

impl Termination {
    /// Errored and timed-out candidates are disqualified.
    pub fn is_usable(self) -> bool {
        matches!(self, Termination::BudgetReached | Termination::ModelFinished)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::BudgetReached => "budget_reached",
            Termination::ModelFinished => "model_finished",
            Termination::Error => "error",
            Termination::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

/// Output of one model call, truncated or complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub model_id: String,
    pub text: String,
    pub completion_tokens: u64,
    pub prompt_tokens: u64,
    /// Wall time in milliseconds.
    pub latency_ms: f64,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    /// Token counts were counted client-side rather than reported by the provider.
    pub estimated: bool,
}

impl Generation {
    pub fn failed(model_id: &str, termination: Termination, detail: impl Into<String>) -> Self {
        Self {
            model_id: model_id.to_string(),
            text: String::new(),
            completion_tokens: 0,
            prompt_tokens: 0,
            latency_ms: 0.0,
            termination,
            error_detail: Some(detail.into()),
            estimated: true,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.termination.is_usable()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// A short prefix streamed from a candidate.
pub type BootResponse = Generation;
/// A full (capped) answer.
pub type FullResponse = Generation;

/// The selector's ranking mapped back to model identities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Best to worst.
    pub ranking: Vec<String>,
    pub selected: Vec<String>,
    /// Last selector reply verbatim; empty when the selector never answered.
    pub selector_raw: String,
    pub fallback_used: bool,
    /// Anonymous label → model id, as presented to the selector.
    pub label_map: Vec<(String, String)>,
}

/// Role a model call plays in a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Boot,
    Continuation,
    Selection,
    Aggregation,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Purpose::Boot => "boot",
            Purpose::Continuation => "continuation",
            Purpose::Selection => "selection",
            Purpose::Aggregation => "aggregation",
        };
        f.write_str(s)
    }
}

/// One model invocation as recorded in a trace. Every call has exactly one
/// ledger entry with the same `call_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_id: u64,
    pub layer_index: usize,
    pub purpose: Purpose,
    pub model_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
    pub termination: Termination,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

/// How a trace was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Router,
    AllFull,
    SingleBest,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Router => "router",
            Strategy::AllFull => "all-full",
            Strategy::SingleBest => "single-best",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer_index: usize,
    /// Boot probes (layer 1 only) followed by full answers or continuations.
    pub responses: Vec<Generation>,
    pub selection: SelectionResult,
    /// Models dropped in this layer because their call errored or timed out.
    pub disqualified: Vec<String>,
    pub aggregate_text: String,
    pub aggregate_tokens: u64,
    /// The aggregator failed and the top-ranked answer was passed through.
    pub degraded: bool,
    pub calls: Vec<CallRecord>,
}

/// Complete record of one routed query; the unit of replay and audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub query_id: String,
    pub query: Query,
    pub seed: u64,
    /// No pool model carried a required capability; the full pool was used.
    pub capability_fallback: bool,
    pub layers: Vec<LayerRecord>,
    pub final_text: String,
    pub ledger: CostLedger,
    pub config: RouterConfig,
}

pub const TRACE_SCHEMA_VERSION: u32 = 1;

impl RoutingTrace {
    pub fn calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.layers.iter().flat_map(|l| l.calls.iter())
    }

    pub fn call_count(&self) -> usize {
        self.layers.iter().map(|l| l.calls.len()).sum()
    }

    pub fn calls_for(&self, purpose: Purpose) -> usize {
        self.calls().filter(|c| c.purpose == purpose).count()
    }

    /// Checks that ledger entries and trace call records correspond 1:1.
    pub fn is_closed(&self) -> bool {
        let mut calls: Vec<u64> = self.calls().map(|c| c.call_id).collect();
        let mut entries: Vec<u64> = self.ledger.entries().iter().map(|e| e.call_id).collect();
        calls.sort_unstable();
        entries.sort_unstable();
        let unique = calls.windows(2).all(|w| w[0] != w[1]);
        unique && calls == entries
    }
}
