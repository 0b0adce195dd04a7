//! The HTTP service end to end over a real socket.

use std::sync::Arc;

use rust_decimal_macros::dec;
use serde_json::{json, Value};

use bootroute::harness::serve::{app, ServiceState};
use bootroute::{MockBackend, MockReply, MockScript, ModelClient, ModelSpec, Router, RouterConfig, RouterParams};

fn router(broken: bool) -> Router {
    let reply = if broken {
        MockReply::text("x").error_at(1)
    } else {
        MockReply::generate(100, 5)
    };
    let mocks = MockBackend::from_scripts([
        ("a", MockScript::new(vec![reply.clone()])),
        ("b", MockScript::new(vec![reply])),
        ("sel", MockScript::new(vec![MockReply::text("[LLM1, LLM2]")])),
        ("agg", MockScript::new(vec![MockReply::text("the merged answer")])),
    ])
    .unwrap();
    let mut config = RouterConfig::new(
        vec![
            ModelSpec::new("a", "mock://a", dec!(1)),
            ModelSpec::new("b", "mock://b", dec!(2)),
        ],
        RouterParams {
            k: 1,
            layers: 1,
            boot_budget: 20,
            lambda: 0.0,
            selector_model: "a".into(),
            aggregator_model: "a".into(),
            max_final_tokens: 64,
            request_timeout_secs: 5.0,
            selector_max_tokens: 32,
            temperature: None,
        },
    )
    .unwrap();
    config.auxiliary = vec![ModelSpec::new("sel", "mock://sel", dec!(1)), ModelSpec::new("agg", "mock://agg", dec!(1))];
    config.router.selector_model = "sel".into();
    config.router.aggregator_model = "agg".into();
    Router::new(ModelClient::new().unwrap().with_mocks(mocks), config.validated().unwrap())
}

async fn start(broken: bool) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = ServiceState::new(router(broken), 2);
    tokio::spawn(async move { axum::serve(listener, app(Arc::clone(&state))).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test]
async fn route_then_fetch_trace() {
    let base = start(false).await;
    let http = reqwest::Client::new();
    let health = http.get(format!("{base}/healthz")).send().await.unwrap();
    assert_eq!(health.status(), 200);
    assert_eq!(health.text().await.unwrap(), "ok");

    let resp = http
        .post(format!("{base}/route"))
        .json(&json!({ "text": "What is 2+2?", "query_id": "q7" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["final_text"], "the merged answer");
    assert_eq!(body["query_id"], "q7");
    assert_eq!(body["cost"]["calls"], 2 + 1 + 1 + 1);

    let trace_id = body["trace_id"].as_str().unwrap();
    let trace: Value = http.get(format!("{base}/trace/{trace_id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(trace["query_id"], "q7");
    assert_eq!(trace["layers"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn client_errors() {
    let base = start(false).await;
    let http = reqwest::Client::new();
    for body in ["not json", r#"{"text": "   "}"#, r#"{"text": "hi", "extra": 1}"#] {
        let resp = http
            .post(format!("{base}/route"))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400, "{body}");
        let v: Value = resp.json().await.unwrap();
        assert!(v["error"].is_string());
    }
    let missing = http.get(format!("{base}/trace/nope")).send().await.unwrap();
    assert_eq!(missing.status(), 404);
}

#[tokio::test]
async fn total_failure_is_a_gateway_error_with_trace() {
    let base = start(true).await;
    let http = reqwest::Client::new();
    let resp = http.post(format!("{base}/route")).json(&json!({ "text": "hi" })).send().await.unwrap();
    assert_eq!(resp.status(), 502);
    let body: Value = resp.json().await.unwrap();
    let id = body["trace_id"].as_str().unwrap();
    let trace: Value = http.get(format!("{base}/trace/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(trace["layers"][0]["disqualified"].as_array().unwrap().len(), 2);
}
