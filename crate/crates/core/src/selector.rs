//! Ranks candidates from their partial outputs via a selector model.
//!
//! Candidates are shown under anonymous labels `LLM1..LLMn`, assigned in a
//! fresh random order for each call. The reply is parsed leniently: any
//! recognizable label order is completed into a full permutation. When the
//! reply carries no signal after one retry, candidates are ranked by price.

use std::collections::HashSet;
use std::sync::LazyLock;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use crate::client::{ChatRequest, ModelClient};
use crate::error::SelectorError;
use crate::prompts;
use crate::types::{Generation, ModelSpec, SelectionResult};

/// A candidate under its anonymous label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledCandidate {
    pub label: String,
    pub boot_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorPromptContext {
    pub query_text: String,
    /// In label order: `LLM1`, `LLM2`, …
    pub candidates: Vec<LabelledCandidate>,
    /// `(label, model_id)` in label order.
    pub label_map: Vec<(String, String)>,
}

impl SelectorPromptContext {
    pub fn model_for(&self, label: &str) -> Option<&str> {
        self.label_map
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, m)| m.as_str())
    }

    pub fn render(&self) -> String {
        let pairs: Vec<(String, String)> = self
            .candidates
            .iter()
            .map(|c| (c.label.clone(), c.boot_text.clone()))
            .collect();
        prompts::render_selector(&self.query_text, &pairs)
    }
}

/// Assigns labels in random order and renders the ranking prompt.
pub fn build_selector_prompt<R: Rng + ?Sized>(
    query_text: &str,
    boots: &[Generation],
    rng: &mut R,
) -> Result<(SelectorPromptContext, String), SelectorError> {
    if boots.is_empty() {
        return Err(SelectorError::NoCandidates);
    }
    let mut order: Vec<usize> = (0..boots.len()).collect();
    order.shuffle(rng);
    let mut candidates = Vec::with_capacity(boots.len());
    let mut label_map = Vec::with_capacity(boots.len());
    for (pos, &idx) in order.iter().enumerate() {
        let label = prompts::label(pos + 1);
        candidates.push(LabelledCandidate {
            label: label.clone(),
            boot_text: boots[idx].text.clone(),
        });
        label_map.push((label, boots[idx].model_id.clone()));
    }
    let ctx = SelectorPromptContext {
        query_text: query_text.to_string(),
        candidates,
        label_map,
    };
    let prompt = ctx.render();
    Ok((ctx, prompt))
}

static BRACKETS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\[\]]*)\]").unwrap());
static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bLLM[ _-]?(\d+)\b").unwrap());

/// Valid 1-based label numbers in order of appearance.
fn labels_in(text: &str, n: usize) -> Vec<usize> {
    LABEL
        .captures_iter(text)
        .filter_map(|c| c[1].parse::<usize>().ok())
        .filter(|i| (1..=n).contains(i))
        .collect()
}

/// Parses a ranking into a full permutation of the context's model ids.
pub fn parse_ranking(reply: &str, ctx: &SelectorPromptContext) -> Result<Vec<String>, SelectorError> {
    let n = ctx.label_map.len();
    let found = BRACKETS
        .captures_iter(reply)
        .map(|c| labels_in(&c[1], n))
        .find(|l| !l.is_empty())
        .unwrap_or_else(|| labels_in(reply, n));
    if found.is_empty() {
        return Err(SelectorError::ParseFailure);
    }
    let mut seen = HashSet::new();
    let mut order: Vec<usize> = found.into_iter().filter(|i| seen.insert(*i)).collect();
    order.extend((1..=n).filter(|i| !seen.contains(i)));
    Ok(order
        .into_iter()
        .map(|i| ctx.label_map[i - 1].1.clone())
        .collect())
}

/// Price ascending, ties in candidate (pool) order.
pub fn fallback_ranking(candidates: &[&ModelSpec]) -> Vec<String> {
    let mut sorted: Vec<&ModelSpec> = candidates.to_vec();
    sorted.sort_by_key(|m| m.price_per_million_tokens);
    sorted.into_iter().map(|m| m.model_id.clone()).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SelectorSettings {
    pub max_tokens: u32,
    pub timeout: Duration,
    pub temperature: Option<f32>,
}

impl Default for SelectorSettings {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            timeout: Duration::from_secs(60),
            temperature: None,
        }
    }
}

/// The selection plus every selector call made to reach it.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub result: SelectionResult,
    pub calls: Vec<Generation>,
}

/// Ranks the usable entries of `candidates` (spec, boot) and keeps the top `k`.
///
/// `candidates` must be in pool order; that order breaks price ties in the
/// fallback ranking.
pub async fn select_top_k<R: Rng + ?Sized>(
    client: &ModelClient,
    query_text: &str,
    candidates: &[(&ModelSpec, &Generation)],
    k: usize,
    selector_model: &ModelSpec,
    settings: SelectorSettings,
    rng: &mut R,
) -> Result<SelectionOutcome, SelectorError> {
    let usable: Vec<(&ModelSpec, &Generation)> =
        candidates.iter().copied().filter(|(_, g)| g.is_usable()).collect();
    let boots: Vec<Generation> = usable.iter().map(|(_, g)| (*g).clone()).collect();
    let (ctx, prompt) = build_selector_prompt(query_text, &boots, rng)?;

    let mut calls = Vec::new();
    let mut ranking = None;
    let mut raw = String::new();
    for attempt in 0..2 {
        let content = if attempt == 0 {
            prompt.clone()
        } else {
            format!("{prompt}{}", prompts::render_selector_reminder(ctx.label_map.len()))
        };
        let request = ChatRequest::user(selector_model.model_id.clone(), content, settings.max_tokens)
            .with_temperature(settings.temperature);
        let reply = client.complete(selector_model, &request, settings.timeout).await;
        let usable_reply = reply.is_usable();
        raw = reply.text.clone();
        calls.push(reply);
        if usable_reply {
            if let Ok(r) = parse_ranking(&raw, &ctx) {
                ranking = Some(r);
                break;
            }
        }
    }

    let fallback_used = ranking.is_none();
    let ranking = ranking.unwrap_or_else(|| {
        let specs: Vec<&ModelSpec> = usable.iter().map(|(s, _)| *s).collect();
        fallback_ranking(&specs)
    });
    let selected = ranking.iter().take(k.min(ranking.len())).cloned().collect();
    Ok(SelectionOutcome {
        result: SelectionResult {
            ranking,
            selected,
            selector_raw: raw,
            fallback_used,
            label_map: ctx.label_map,
        },
        calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockBackend, MockReply, MockScript};
    use crate::types::Termination;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rust_decimal_macros::dec;

    fn boot(model: &str, text: &str) -> Generation {
        Generation {
            model_id: model.into(),
            text: text.into(),
            completion_tokens: 3,
            prompt_tokens: 3,
            latency_ms: 1.0,
            termination: Termination::BudgetReached,
            error_detail: None,
            estimated: false,
        }
    }

    fn ctx(models: &[&str]) -> SelectorPromptContext {
        SelectorPromptContext {
            query_text: "q".into(),
            candidates: models
                .iter()
                .enumerate()
                .map(|(i, m)| LabelledCandidate {
                    label: prompts::label(i + 1),
                    boot_text: format!("text of {m}"),
                })
                .collect(),
            label_map: models
                .iter()
                .enumerate()
                .map(|(i, m)| (prompts::label(i + 1), m.to_string()))
                .collect(),
        }
    }

    #[test]
    fn prompt_has_one_block_per_boot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 3, 5] {
            let boots: Vec<_> = (0..n).map(|i| boot(&format!("m{i}"), &format!("b{i}"))).collect();
            let (ctx, prompt) = build_selector_prompt("q", &boots, &mut rng).unwrap();
            for i in 1..=n {
                assert_eq!(prompt.matches(&format!("\nLLM{i}: ")).count(), 1);
            }
            assert!(!prompt.contains(&format!("\nLLM{}: ", n + 1)));
            assert!(prompt.contains(&format!("{}\n", prompts::format_line(n))));
            let mut ids: Vec<_> = ctx.label_map.iter().map(|(_, m)| m.clone()).collect();
            ids.sort();
            assert_eq!(ids, (0..n).map(|i| format!("m{i}")).collect::<Vec<_>>());
            for c in &ctx.candidates {
                let model = ctx.model_for(&c.label).unwrap();
                assert_eq!(c.boot_text, format!("b{}", &model[1..]));
            }
        }
        assert_eq!(
            build_selector_prompt("q", &[], &mut rng).unwrap_err(),
            SelectorError::NoCandidates
        );
    }

    #[test]
    fn labels_are_shuffled_across_calls() {
        let boots: Vec<_> = (0..5).map(|i| boot(&format!("m{i}"), "x")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let maps: HashSet<Vec<(String, String)>> = (0..20)
            .map(|_| build_selector_prompt("q", &boots, &mut rng).unwrap().0.label_map)
            .collect();
        assert!(maps.len() > 1);
    }

    #[test]
    fn parse_examples() {
        let c = ctx(&["a", "b", "c"]);
        assert_eq!(parse_ranking("[LLM3, LLM1, LLM2]", &c).unwrap(), ["c", "a", "b"]);
        assert_eq!(parse_ranking("Ranking: [LLM2, LLM2, LLM1]", &c).unwrap(), ["b", "a", "c"]);
        assert_eq!(
            parse_ranking("I cannot rank these.", &c).unwrap_err(),
            SelectorError::ParseFailure
        );
        assert_eq!(parse_ranking("", &c).unwrap_err(), SelectorError::ParseFailure);
    }

    #[test]
    fn parse_tolerates_noise() {
        let c = ctx(&["a", "b", "c"]);
        // First bracket with labels wins; out-of-range labels are ignored.
        assert_eq!(parse_ranking("[note] [llm9, llm2] [LLM1]", &c).unwrap(), ["b", "a", "c"]);
        // No brackets: labels anywhere.
        assert_eq!(parse_ranking("Best is LLM3 then LLM 1.", &c).unwrap(), ["c", "a", "b"]);
        assert_eq!(parse_ranking("[LLM10]", &ctx(&["a"])).unwrap_err(), SelectorError::ParseFailure);
    }

    #[test]
    fn fallback_orders_by_price_then_pool() {
        let a = ModelSpec::new("a", "mock://a", dec!(0.88));
        let b = ModelSpec::new("b", "mock://b", dec!(1.32));
        let c = ModelSpec::new("c", "mock://c", dec!(1.10));
        let d = ModelSpec::new("d", "mock://d", dec!(0.88));
        assert_eq!(fallback_ranking(&[&a, &b, &c, &d]), ["a", "d", "c", "b"]);
    }

    fn pool(prices: &[(&str, rust_decimal::Decimal)]) -> Vec<ModelSpec> {
        prices
            .iter()
            .map(|(m, p)| ModelSpec::new(*m, format!("mock://{m}"), *p))
            .collect()
    }

    async fn run(
        client: &ModelClient,
        specs: &[ModelSpec],
        boots: &[Generation],
        k: usize,
        seed: u64,
    ) -> SelectionOutcome {
        let sel = ModelSpec::new("sel", "mock://sel", dec!(1));
        let pairs: Vec<(&ModelSpec, &Generation)> = specs.iter().zip(boots).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        select_top_k(client, "q", &pairs, k, &sel, SelectorSettings::default(), &mut rng)
            .await
            .unwrap()
    }

    #[tokio::test]
    async fn selects_prefix_of_parsed_ranking() {
        let mocks = MockBackend::from_scripts([(
            "sel",
            MockScript::new(vec![MockReply::text("[LLM4, LLM2, LLM5, LLM1, LLM3]")]),
        )])
        .unwrap();
        let client = ModelClient::new().unwrap().with_mocks(mocks.clone());
        let specs = pool(&[("a", dec!(1)), ("b", dec!(1)), ("c", dec!(1)), ("d", dec!(1)), ("e", dec!(1))]);
        let boots: Vec<_> = specs.iter().map(|s| boot(&s.model_id, "p")).collect();
        let out = run(&client, &specs, &boots, 2, 3).await;
        let r = &out.result;
        let m = |l: &str| r.label_map.iter().find(|(x, _)| x == l).unwrap().1.clone();
        assert_eq!(r.selected, vec![m("LLM4"), m("LLM2")]);
        assert_eq!(r.ranking.len(), 5);
        assert!(!r.fallback_used);
        assert_eq!(out.calls.len(), 1);
        let sent = mocks.requests_for("sel");
        assert_eq!(sent.len(), 1);
        assert!(!sent[0].stream);
        assert_eq!(sent[0].max_tokens, 512);
    }

    #[tokio::test]
    async fn k_equal_to_candidates_selects_all() {
        let mocks = MockBackend::from_scripts([("sel", MockScript::new(vec![MockReply::text("[LLM2]")]))]).unwrap();
        let client = ModelClient::new().unwrap().with_mocks(mocks);
        let specs = pool(&[("a", dec!(1)), ("b", dec!(2))]);
        let boots: Vec<_> = specs.iter().map(|s| boot(&s.model_id, "p")).collect();
        let out = run(&client, &specs, &boots, 2, 0).await;
        let mut sel = out.result.selected.clone();
        sel.sort();
        assert_eq!(sel, ["a", "b"]);
    }

    #[tokio::test]
    async fn retries_once_then_falls_back_to_price() {
        let mocks = MockBackend::from_scripts([(
            "sel",
            MockScript::new(vec![MockReply::text("I cannot rank these.")]),
        )])
        .unwrap();
        let client = ModelClient::new().unwrap().with_mocks(mocks.clone());
        let specs = pool(&[("a", dec!(0.88)), ("b", dec!(1.32)), ("c", dec!(1.10))]);
        let boots: Vec<_> = specs.iter().map(|s| boot(&s.model_id, "p")).collect();
        let out = run(&client, &specs, &boots, 2, 0).await;
        assert!(out.result.fallback_used);
        assert_eq!(out.result.selected, ["a", "c"]);
        assert_eq!(out.calls.len(), 2);
        let sent = mocks.requests_for("sel");
        assert!(sent[1].last_user().contains("Reminder: reply with the ranking list only"));
        assert!(!sent[0].last_user().contains("Reminder"));
    }

    #[tokio::test]
    async fn unreachable_selector_falls_back() {
        let client = ModelClient::new()
            .unwrap()
            .with_mocks(MockBackend::from_scripts(Vec::<(&str, MockScript)>::new()).unwrap());
        let specs = pool(&[("a", dec!(0.88)), ("b", dec!(1.32)), ("c", dec!(1.10))]);
        let boots: Vec<_> = specs.iter().map(|s| boot(&s.model_id, "p")).collect();
        let out = run(&client, &specs, &boots, 2, 0).await;
        assert!(out.result.fallback_used);
        assert_eq!(out.result.selected, ["a", "c"]);
        assert!(out.calls.iter().all(|c| c.termination == Termination::Error));
    }

    #[tokio::test]
    async fn errored_boots_are_never_selected() {
        let mocks = MockBackend::from_scripts([("sel", MockScript::new(vec![MockReply::text("[LLM1, LLM2, LLM3]")]))]).unwrap();
        let client = ModelClient::new().unwrap().with_mocks(mocks);
        let specs = pool(&[("a", dec!(1)), ("b", dec!(1)), ("c", dec!(1))]);
        let mut boots: Vec<_> = specs.iter().map(|s| boot(&s.model_id, "p")).collect();
        boots[1].termination = Termination::Error;
        let out = run(&client, &specs, &boots, 3, 5).await;
        assert_eq!(out.result.ranking.len(), 2);
        assert!(!out.result.selected.contains(&"b".to_string()));

        let none: Vec<_> = boots.iter().cloned().map(|mut b| { b.termination = Termination::Timeout; b }).collect();
        let pairs: Vec<(&ModelSpec, &Generation)> = specs.iter().zip(&none).collect();
        let sel = ModelSpec::new("sel", "mock://sel", dec!(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = select_top_k(&client, "q", &pairs, 1, &sel, SelectorSettings::default(), &mut rng)
            .await
            .unwrap_err();
        assert_eq!(err, SelectorError::NoCandidates);
    }

    proptest! {
        #[test]
        fn parse_is_a_permutation(reply in ".{0,80}", n in 1usize..8, picks in proptest::collection::vec(0usize..10, 0..10)) {
            let models: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
            let refs: Vec<&str> = models.iter().map(String::as_str).collect();
            let c = ctx(&refs);
            let labels: Vec<String> = picks.iter().map(|p| format!("LLM{p}")).collect();
            let reply = format!("{reply} [{}]", labels.join(", "));
            match parse_ranking(&reply, &c) {
                Ok(mut out) => {
                    out.sort();
                    let mut want = models.clone();
                    want.sort();
                    prop_assert_eq!(out, want);
                }
                Err(_) => prop_assert!(picks.iter().all(|p| *p == 0 || *p > n)),
            }
        }

        #[test]
        fn choice_depends_only_on_label_map(seed in any::<u64>()) {
            // Same reply, different pool orders: the chosen model is whichever
            // sits behind LLM1, regardless of where it was in the pool.
            let boots: Vec<_> = ["a", "b", "c", "d"].iter().map(|m| boot(m, "x")).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ctx1, _) = build_selector_prompt("q", &boots, &mut rng).unwrap();
            let ranked = parse_ranking("[LLM1]", &ctx1).unwrap();
            prop_assert_eq!(ranked[0].as_str(), ctx1.model_for("LLM1").unwrap());
            let mut reversed = boots.clone();
            reversed.reverse();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ctx2, _) = build_selector_prompt("q", &reversed, &mut rng).unwrap();
            let ranked2 = parse_ranking("[LLM1]", &ctx2).unwrap();
            prop_assert_eq!(ranked2[0].as_str(), ctx2.model_for("LLM1").unwrap());
        }
    }
}
