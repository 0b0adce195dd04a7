//! HTTP routing service.
//!
//! - `POST /route` with `{"text": "...", "query_id"?: "...", "required_capabilities"?: [...]}`
//! - `GET /trace/{id}` returns the stored trace
//! - `GET /healthz` returns `ok`

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::cost::present_currency;
use crate::error::RouteError;
use crate::pipeline::Router;
use crate::types::{Query, RoutingTrace};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub text: String,
    #[serde(default)]
    pub query_id: Option<String>,
    #[serde(default)]
    pub required_capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub currency: Decimal,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub trace_id: String,
    pub query_id: String,
    pub final_text: String,
    pub cost: CostSummary,
}

pub struct ServiceState {
    router: Router,
    traces: Mutex<HashMap<String, RoutingTrace>>,
    permits: Semaphore,
}

impl ServiceState {
    /// At most `concurrency` pipelines run at once; further requests wait.
    pub fn new(router: Router, concurrency: usize) -> Arc<Self> {
        Arc::new(Self {
            router,
            traces: Mutex::new(HashMap::new()),
            permits: Semaphore::new(concurrency.max(1)),
        })
    }

    fn store(&self, trace: RoutingTrace) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        self.traces.lock().expect("trace store poisoned").insert(id.clone(), trace);
        id
    }
}

fn error(status: StatusCode, message: impl Into<String>, trace_id: Option<String>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(id) = trace_id {
        body["trace_id"] = json!(id);
    }
    (status, Json(body)).into_response()
}

fn summary(trace: &RoutingTrace) -> CostSummary {
    let t = trace.ledger.totals();
    CostSummary {
        prompt_tokens: t.prompt_tokens,
        completion_tokens: t.completion_tokens,
        total_tokens: t.tokens,
        currency: present_currency(t.currency),
        calls: trace.call_count(),
    }
}

async fn route_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let req: RouteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}"), None),
    };
    if req.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "text must be non-empty", None);
    }
    let query_id = req.query_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let query = Query::new(query_id.clone(), req.text).requiring(req.required_capabilities);
    let _permit = state.permits.acquire().await.expect("semaphore never closes");
    match state.router.route(&query).await {
        Ok(trace) => {
            let cost = summary(&trace);
            let final_text = trace.final_text.clone();
            let trace_id = state.store(trace);
            Json(RouteResponse {
                trace_id,
                query_id,
                final_text,
                cost,
            })
            .into_response()
        }
        Err(RouteError::AllCandidatesFailed { layer, trace }) => {
            let id = state.store(*trace);
            error(
                StatusCode::BAD_GATEWAY,
                format!("all candidates failed in layer {layer}"),
                Some(id),
            )
        }
        Err(e @ RouteError::InvalidQuery(_)) => error(StatusCode::BAD_REQUEST, e.to_string(), None),
        Err(e) => error(StatusCode::BAD_GATEWAY, e.to_string(), None),
    }
}

async fn trace_handler(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Response {
    let traces = state.traces.lock().expect("trace store poisoned");
    match traces.get(&id) {
        Some(t) => Json(t.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no trace '{id}'"), None),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn app(state: Arc<ServiceState>) -> axum::Router {
    axum::Router::new()
        .route("/route", post(route_handler))
        .route("/trace/{id}", get(trace_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve<F>(router: Router, listener: TcpListener, concurrency: usize, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let state = ServiceState::new(router, concurrency);
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "serving");
    }
    axum::serve(listener, app(state)).with_graceful_shutdown(shutdown).await
}
