//! Layered routing: probe every eligible model, rank the probes, generate
//! with the top-k, merge, and repeat the generate/rank/merge round for the
//! remaining layers with the previous merge as context.
//!
//! Also hosts the two cost baselines, `all-full` (every eligible model
//! answers in full, one merge) and `single-best` (one model answers).

use futures::future::join_all;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::aggregator::{aggregate, AggregateInput, AggregatorSettings};
use crate::client::{ChatRequest, ModelClient};
use crate::config::{eligible_models, Overrides, RouterConfig};
use crate::cost::{CostLedger, LedgerEntry};
use crate::error::{RouteError, SelectorError};
use crate::prompts;
use crate::selector::{select_top_k, SelectorSettings};
use crate::types::{
    CallRecord, Generation, LayerRecord, ModelSpec, Purpose, Query, RoutingTrace, SelectionResult, Strategy,
    TRACE_SCHEMA_VERSION,
};

/// Label randomization RNG for one query: a function of the config seed and
/// the query id only, so concurrent runs reproduce sequential ones.
pub fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Assigns call ids and keeps the trace and ledger in lockstep.
struct Recorder {
    next_id: u64,
    ledger: CostLedger,
}

impl Recorder {
    fn new() -> Self {
        Self {
            next_id: 1,
            ledger: CostLedger::new(),
        }
    }

    fn record(&mut self, layer: &mut LayerRecord, purpose: Purpose, spec: &ModelSpec, g: &Generation) {
        let call_id = self.next_id;
        self.next_id += 1;
        layer.calls.push(CallRecord {
            call_id,
            layer_index: layer.layer_index,
            purpose,
            model_id: spec.model_id.clone(),
            prompt_tokens: g.prompt_tokens,
            completion_tokens: g.completion_tokens,
            estimated: g.estimated,
            termination: g.termination,
            latency_ms: g.latency_ms,
            error_detail: g.error_detail.clone(),
        });
        self.ledger.push(LedgerEntry {
            call_id,
            model_id: spec.model_id.clone(),
            purpose,
            prompt_tokens: g.prompt_tokens,
            completion_tokens: g.completion_tokens,
            estimated: g.estimated,
            unit_price: spec.price_per_million_tokens,
        });
    }
}

fn empty_layer(layer_index: usize) -> LayerRecord {
    LayerRecord {
        layer_index,
        responses: Vec::new(),
        selection: SelectionResult {
            ranking: Vec::new(),
            selected: Vec::new(),
            selector_raw: String::new(),
            fallback_used: false,
            label_map: Vec::new(),
        },
        disqualified: Vec::new(),
        aggregate_text: String::new(),
        aggregate_tokens: 0,
        degraded: false,
        calls: Vec::new(),
    }
}

fn disqualify(layer: &mut LayerRecord, g: &Generation) {
    if !g.is_usable() && !layer.disqualified.contains(&g.model_id) {
        layer.disqualified.push(g.model_id.clone());
    }
}

/// Per-query routing state.
struct Run<'a> {
    client: &'a ModelClient,
    config: &'a RouterConfig,
    query: &'a Query,
    rec: Recorder,
    trace: RoutingTrace,
}

impl<'a> Run<'a> {
    fn new(client: &'a ModelClient, config: &'a RouterConfig, query: &'a Query, strategy: Strategy) -> Self {
        let trace = RoutingTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            strategy,
            query_id: query.query_id.clone(),
            query: query.clone(),
            seed: config.seed,
            capability_fallback: false,
            layers: Vec::new(),
            final_text: String::new(),
            ledger: CostLedger::new(),
            config: config.clone(),
        };
        Self {
            client,
            config,
            query,
            rec: Recorder::new(),
            trace,
        }
    }

    fn selector_settings(&self) -> SelectorSettings {
        SelectorSettings {
            max_tokens: self.config.router.selector_max_tokens,
            timeout: self.config.request_timeout(),
            temperature: self.config.router.temperature,
        }
    }

    fn aggregator_settings(&self) -> AggregatorSettings {
        AggregatorSettings {
            max_tokens: self.config.router.max_final_tokens,
            timeout: self.config.request_timeout(),
            temperature: self.config.router.temperature,
        }
    }

    /// Full answers from `models`, all to the same user turn, concurrently.
    async fn generate(&mut self, layer: &mut LayerRecord, models: &[ModelSpec], content: &str) -> Vec<Generation> {
        let client = self.client;
        let r = &self.config.router;
        let timeout = self.config.request_timeout();
        let calls = models.iter().map(|m| {
            let request = ChatRequest::user(m.model_id.clone(), content, r.max_final_tokens)
                .with_temperature(r.temperature);
            async move { client.complete_full(m, &request, r.max_final_tokens, timeout).await }
        });
        let outs = join_all(calls).await;
        for (m, g) in models.iter().zip(&outs) {
            self.rec.record(layer, Purpose::Continuation, m, g);
            disqualify(layer, g);
        }
        layer.responses.extend(outs.iter().cloned());
        outs
    }

    async fn select(
        &mut self,
        layer: &mut LayerRecord,
        models: &[ModelSpec],
        outputs: &[Generation],
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SelectorError> {
        let pairs: Vec<(&ModelSpec, &Generation)> = models.iter().zip(outputs).collect();
        let config: &'a RouterConfig = self.config;
        let selector = config.selector();
        let outcome = select_top_k(self.client, &self.query.text, &pairs, k, selector, self.selector_settings(), rng).await?;
        for g in &outcome.calls {
            self.rec.record(layer, Purpose::Selection, selector, g);
        }
        layer.selection = outcome.result;
        Ok(())
    }

    /// Merges `answers` (rank order) and stores the result on the layer.
    async fn merge(&mut self, layer: &mut LayerRecord, answers: &[(&str, &str)]) {
        let input = AggregateInput::new(&self.query.text, layer.layer_index, answers.iter().copied());
        let config: &'a RouterConfig = self.config;
        let agg = config.aggregator();
        let outcome = aggregate(self.client, &input, agg, self.aggregator_settings()).await;
        for g in &outcome.calls {
            self.rec.record(layer, Purpose::Aggregation, agg, g);
        }
        layer.aggregate_text = outcome.text;
        layer.aggregate_tokens = outcome.tokens;
        layer.degraded = outcome.degraded;
    }

    fn push_layer(&mut self, layer: LayerRecord) {
        self.trace.layers.push(layer);
    }

    fn fail(mut self, layer: LayerRecord) -> RouteError {
        let index = layer.layer_index;
        self.push_layer(layer);
        RouteError::AllCandidatesFailed {
            layer: index,
            trace: Box::new(self.finish()),
        }
    }

    fn finish(mut self) -> RoutingTrace {
        self.trace.ledger = self.rec.ledger;
        self.trace.final_text = self
            .trace
            .layers
            .last()
            .map(|l| l.aggregate_text.clone())
            .unwrap_or_default();
        self.trace
    }

    fn eligible(&mut self) -> Result<Vec<ModelSpec>, RouteError> {
        if self.query.text.trim().is_empty() {
            return Err(RouteError::InvalidQuery("query text is empty".into()));
        }
        let (models, fallback) = eligible_models(self.query, &self.config.pool);
        if models.is_empty() {
            return Err(RouteError::NoEligibleModels);
        }
        self.trace.capability_fallback = fallback;
        Ok(models)
    }
}

/// Answer texts of `ranking` entries that have a usable output, in rank order.
fn ranked_answers<'g>(ranking: &[String], models: &[ModelSpec], outs: &'g [Generation]) -> Vec<(&'g str, &'g str)> {
    ranking
        .iter()
        .filter_map(|id| {
            models
                .iter()
                .position(|m| &m.model_id == id)
                .map(|i| &outs[i])
                .filter(|g| g.is_usable())
                .map(|g| (g.model_id.as_str(), g.text.as_str()))
        })
        .collect()
}

/// Routes one query through the layered router.
pub async fn route(client: &ModelClient, query: &Query, config: &RouterConfig) -> Result<RoutingTrace, RouteError> {
    let mut run = Run::new(client, config, query, Strategy::Router);
    let eligible = run.eligible()?;
    let r = &config.router;
    let mut rng = query_rng(config.seed, &query.query_id);

    // Layer 1: probe, rank, generate with the top-k, merge.
    let mut layer = empty_layer(1);
    let boots = client
        .boot_all(&query.text, &eligible, r.boot_budget, config.request_timeout(), r.temperature)
        .await;
    for (m, g) in eligible.iter().zip(&boots) {
        run.rec.record(&mut layer, Purpose::Boot, m, g);
        disqualify(&mut layer, g);
    }
    layer.responses.extend(boots.iter().cloned());
    if run.select(&mut layer, &eligible, &boots, r.k, &mut rng).await.is_err() {
        return Err(run.fail(layer));
    }
    let generating: Vec<ModelSpec> = layer
        .selection
        .selected
        .iter()
        .filter_map(|id| eligible.iter().find(|m| &m.model_id == id).cloned())
        .collect();
    let fulls = run.generate(&mut layer, &generating, &query.text).await;
    let answers = ranked_answers(&layer.selection.selected, &generating, &fulls);
    if answers.is_empty() {
        return Err(run.fail(layer));
    }
    run.merge(&mut layer, &answers).await;
    let mut previous = layer.aggregate_text.clone();
    run.push_layer(layer);

    // Layers 2..l: the layer-1 selection refines against the previous merge.
    for t in 2..=r.layers {
        let mut layer = empty_layer(t);
        let content = prompts::render_continuation(&query.text, &previous);
        let outs = run.generate(&mut layer, &generating, &content).await;
        let usable = outs.iter().filter(|g| g.is_usable()).count();
        if usable == 0 || run.select(&mut layer, &generating, &outs, usable, &mut rng).await.is_err() {
            return Err(run.fail(layer));
        }
        let answers = ranked_answers(&layer.selection.ranking, &generating, &outs);
        run.merge(&mut layer, &answers).await;
        previous = layer.aggregate_text.clone();
        run.push_layer(layer);
    }
    Ok(run.finish())
}

/// [`route`] with per-call parameter substitution.
pub async fn route_with_overrides(
    client: &ModelClient,
    query: &Query,
    config: &RouterConfig,
    overrides: &Overrides,
) -> Result<RoutingTrace, RouteError> {
    let config = config.with_overrides(overrides)?;
    route(client, query, &config).await
}

/// Every eligible model answers in full; one merge over all usable answers in
/// pool order.
pub async fn route_all_full(client: &ModelClient, query: &Query, config: &RouterConfig) -> Result<RoutingTrace, RouteError> {
    let mut run = Run::new(client, config, query, Strategy::AllFull);
    let eligible = run.eligible()?;
    let mut layer = empty_layer(1);
    let outs = run.generate(&mut layer, &eligible, &query.text).await;
    let order: Vec<String> = eligible.iter().map(|m| m.model_id.clone()).collect();
    let answers = ranked_answers(&order, &eligible, &outs);
    if answers.is_empty() {
        return Err(run.fail(layer));
    }
    layer.selection.ranking = answers.iter().map(|(m, _)| m.to_string()).collect();
    layer.selection.selected = layer.selection.ranking.clone();
    run.merge(&mut layer, &answers).await;
    run.push_layer(layer);
    Ok(run.finish())
}

/// One model answers; its answer is final.
pub async fn route_single(
    client: &ModelClient,
    query: &Query,
    config: &RouterConfig,
    model_id: &str,
) -> Result<RoutingTrace, RouteError> {
    let mut run = Run::new(client, config, query, Strategy::SingleBest);
    if query.text.trim().is_empty() {
        return Err(RouteError::InvalidQuery("query text is empty".into()));
    }
    let model = config
        .model(model_id)
        .cloned()
        .ok_or_else(|| RouteError::UnknownModel(model_id.to_string()))?;
    let mut layer = empty_layer(1);
    let outs = run.generate(&mut layer, std::slice::from_ref(&model), &query.text).await;
    if !outs[0].is_usable() {
        return Err(run.fail(layer));
    }
    layer.selection.ranking = vec![model.model_id.clone()];
    layer.selection.selected = layer.selection.ranking.clone();
    layer.aggregate_text = outs[0].text.clone();
    layer.aggregate_tokens = outs[0].total_tokens();
    run.push_layer(layer);
    Ok(run.finish())
}

/// A router bound to a client and a validated config.
#[derive(Debug, Clone)]
pub struct Router {
    client: ModelClient,
    config: RouterConfig,
}

impl Router {
    pub fn new(client: ModelClient, config: RouterConfig) -> Self {
        Self { client, config }
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn client(&self) -> &ModelClient {
        &self.client
    }

    pub async fn route(&self, query: &Query) -> Result<RoutingTrace, RouteError> {
        route(&self.client, query, &self.config).await
    }

    pub async fn route_with_overrides(&self, query: &Query, overrides: &Overrides) -> Result<RoutingTrace, RouteError> {
        route_with_overrides(&self.client, query, &self.config, overrides).await
    }

    pub async fn run(&self, query: &Query, strategy: &StrategyChoice) -> Result<RoutingTrace, RouteError> {
        match strategy {
            StrategyChoice::Router => self.route(query).await,
            StrategyChoice::AllFull => route_all_full(&self.client, query, &self.config).await,
            StrategyChoice::SingleBest(model) => route_single(&self.client, query, &self.config, model).await,
        }
    }
}

/// A strategy with its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategyChoice {
    Router,
    AllFull,
    SingleBest(String),
}

impl StrategyChoice {
    pub fn strategy(&self) -> Strategy {
        match self {
            StrategyChoice::Router => Strategy::Router,
            StrategyChoice::AllFull => Strategy::AllFull,
            StrategyChoice::SingleBest(_) => Strategy::SingleBest,
        }
    }
}
