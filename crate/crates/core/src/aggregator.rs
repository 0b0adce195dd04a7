//! Merges selected answers into one response via an aggregator model.

use std::time::Duration;

use crate::client::{ChatRequest, ModelClient};
use crate::prompts;
use crate::types::{Generation, ModelSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceAnswer {
    pub source_label: String,
    pub model_id: String,
    pub text: String,
}

/// Answers in rank order, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateInput {
    pub query_text: String,
    pub answers: Vec<SourceAnswer>,
    pub layer_index: usize,
}

impl AggregateInput {
    /// Labels answers `LLM1..` in the given order.
    pub fn new<'a, I>(query_text: &str, layer_index: usize, answers: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let answers = answers
            .into_iter()
            .enumerate()
            .map(|(i, (model_id, text))| SourceAnswer {
                source_label: prompts::label(i + 1),
                model_id: model_id.to_string(),
                text: text.to_string(),
            })
            .collect();
        Self {
            query_text: query_text.to_string(),
            answers,
            layer_index,
        }
    }
}

pub fn build_aggregate_prompt(input: &AggregateInput) -> String {
    let texts: Vec<&str> = input.answers.iter().map(|a| a.text.as_str()).collect();
    prompts::render_aggregator(&input.query_text, &texts)
}

#[derive(Debug, Clone, Copy)]
pub struct AggregatorSettings {
    pub max_tokens: u32,
    pub timeout: Duration,
    pub temperature: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct AggregateOutcome {
    pub text: String,
    /// Tokens of the successful call; zero when degraded.
    pub tokens: u64,
    /// Both attempts failed and `text` is the top-ranked input verbatim.
    pub degraded: bool,
    pub calls: Vec<Generation>,
}

/// One call, one retry, then degrade to the top-ranked answer.
///
/// Panics if `input.answers` is empty.
pub async fn aggregate(
    client: &ModelClient,
    input: &AggregateInput,
    aggregator_model: &ModelSpec,
    settings: AggregatorSettings,
) -> AggregateOutcome {
    assert!(!input.answers.is_empty(), "aggregate needs at least one answer");
    let prompt = build_aggregate_prompt(input);
    let request = ChatRequest::user(aggregator_model.model_id.clone(), prompt, settings.max_tokens)
        .with_temperature(settings.temperature);
    let mut calls = Vec::new();
    for _ in 0..2 {
        let reply = client.complete(aggregator_model, &request, settings.timeout).await;
        let ok = reply.is_usable();
        calls.push(reply);
        if ok {
            let last = calls.last().unwrap();
            return AggregateOutcome {
                text: last.text.clone(),
                tokens: last.total_tokens(),
                degraded: false,
                calls,
            };
        }
    }
    AggregateOutcome {
        text: input.answers[0].text.clone(),
        tokens: 0,
        degraded: true,
        calls,
    }
}
