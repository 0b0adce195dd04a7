//! Token and currency accounting, the λ-weighted objective, optimal-k search
//! and Pareto frontiers.
//!
//! Every model call appends one [`LedgerEntry`]. Currency is computed in exact
//! decimal arithmetic and rounded only for presentation.

use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Purpose;

const TOKENS_PER_PRICE_UNIT: u64 = 1_000_000;

/// Decimal places used when presenting currency.
pub const CURRENCY_DISPLAY_DP: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call_id: u64,
    pub model_id: String,
    pub purpose: Purpose,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
    /// Price per 10⁶ tokens, copied from the model spec at call time.
    pub unit_price: Decimal,
}

impl LedgerEntry {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn currency(&self) -> Decimal {
        Decimal::from(self.tokens()) * self.unit_price / Decimal::from(TOKENS_PER_PRICE_UNIT)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tokens: u64,
    pub currency: Decimal,
    pub estimated_entries: usize,
}

impl LedgerTotals {
    fn add(&mut self, e: &LedgerEntry) {
        self.prompt_tokens += e.prompt_tokens;
        self.completion_tokens += e.completion_tokens;
        self.tokens += e.tokens();
        self.currency += e.currency();
        if e.estimated {
            self.estimated_entries += 1;
        }
    }
}

/// Append-only record of every call's token usage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LedgerRepr", into = "LedgerRepr")]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
    totals: LedgerTotals,
}

/// Wire form. Totals are recomputed on load, never trusted.
#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    entries: Vec<LedgerEntry>,
    #[serde(default)]
    totals: LedgerTotals,
}

impl From<LedgerRepr> for CostLedger {
    fn from(repr: LedgerRepr) -> Self {
        repr.entries.into_iter().collect()
    }
}

impl From<CostLedger> for LedgerRepr {
    fn from(ledger: CostLedger) -> Self {
        LedgerRepr {
            entries: ledger.entries,
            totals: ledger.totals,
        }
    }
}

impl FromIterator<LedgerEntry> for CostLedger {
    fn from_iter<I: IntoIterator<Item = LedgerEntry>>(iter: I) -> Self {
        let mut ledger = CostLedger::default();
        for e in iter {
            ledger.push(e);
        }
        ledger
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: LedgerEntry) {
        self.totals.add(&entry);
        self.entries.push(entry);
    }

    /// Appends every entry of `other`.
    pub fn extend(&mut self, other: &CostLedger) {
        for e in &other.entries {
            self.push(e.clone());
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn totals(&self) -> LedgerTotals {
        self.totals
    }

    pub fn tokens_by_purpose(&self) -> BTreeMap<Purpose, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.purpose).or_insert(0) += e.tokens();
        }
        out
    }

    pub fn completion_tokens_for(&self, purpose: Purpose) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.purpose == purpose)
            .map(|e| e.completion_tokens)
            .sum()
    }

    /// Copy with unit prices replaced from `table` where it has an entry.
    pub fn repriced(&self, table: &PriceTable) -> CostLedger {
        self.entries
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if let Some(p) = table.get(&e.model_id) {
                    e.unit_price = p;
                }
                e
            })
            .collect()
    }
}

/// Sum of prompt and completion tokens over all entries.
pub fn total_tokens(ledger: &CostLedger) -> u64 {
    ledger.entries.iter().map(LedgerEntry::tokens).sum()
}

/// Exact currency cost of all entries.
pub fn total_currency(ledger: &CostLedger) -> Decimal {
    ledger.entries.iter().map(LedgerEntry::currency).sum()
}

/// Rounds a currency amount for display.
pub fn present_currency(amount: Decimal) -> Decimal {
    amount.round_dp(CURRENCY_DISPLAY_DP)
}

/// Model id → price per 10⁶ tokens, used for what-if repricing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, Decimal>);

impl PriceTable {
    pub fn new(prices: BTreeMap<String, Decimal>) -> Self {
        Self(prices)
    }

    pub fn get(&self, model_id: &str) -> Option<Decimal> {
        self.0.get(model_id).copied()
    }

    /// Reads a flat `model_id = price` TOML table, or a JSON object.
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::PriceTable(e.to_string()))?;
        let table: PriceTable = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CostError::PriceTable(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| CostError::PriceTable(e.to_string()))?
        };
        if let Some((id, _)) = table.0.iter().find(|(_, p)| **p < Decimal::ZERO) {
            return Err(CostError::PriceTable(format!("negative price for '{id}'")));
        }
        Ok(table)
    }

    /// Per-million prices for a reference pool of hosted models.
    pub fn reference() -> Self {
        let rows: [(&str, i64, u32); 8] = [
            ("Llama-3.1-70B-Instruct", 88, 2),
            ("qwen2.5-max", 132, 2),
            ("qwen-2.5-Math-72B", 165, 2),
            ("Mixtral-8x22B-Instruct-v0.1", 80, 2),
            ("deepseek-v3", 110, 2),
            ("deepseek-R1", 220, 2),
            ("o3-mini", 440, 2),
            ("gpt-4-turbo-2024-04-09", 30, 0),
        ];
        Self(
            rows.iter()
                .map(|(id, m, s)| (id.to_string(), Decimal::new(*m, *s)))
                .collect(),
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no candidate k values supplied")]
    Empty,
    #[error("consistency and cost maps must share the same k values")]
    KeyMismatch,
    #[error("lambda must be a finite number ≥ 0")]
    InvalidLambda,
    #[error("price table: {0}")]
    PriceTable(String),
}

/// `expected_consistency − λ·total_cost`.
pub fn objective(expected_consistency: f64, total_cost: f64, lambda: f64) -> f64 {
    expected_consistency - lambda * total_cost
}

/// Smallest k maximizing the objective; ties go to the cheaper (smaller) k.
pub fn optimal_k(
    expected_consistency_by_k: &BTreeMap<usize, f64>,
    cost_by_k: &BTreeMap<usize, f64>,
    lambda: f64,
) -> Result<usize, CostError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CostError::InvalidLambda);
    }
    if expected_consistency_by_k.is_empty() {
        return Err(CostError::Empty);
    }
    if !expected_consistency_by_k.keys().eq(cost_by_k.keys()) {
        return Err(CostError::KeyMismatch);
    }
    let mut best: Option<(usize, f64)> = None;
    // BTreeMap iterates k ascending, so strict `>` keeps the smallest k on ties.
    for (&k, &es) in expected_consistency_by_k {
        let value = objective(es, cost_by_k[&k], lambda);
        match best {
            Some((_, v)) if value <= v => {}
            _ => best = Some((k, value)),
        }
    }
    Ok(best.map(|(k, _)| k).expect("non-empty map"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    /// Higher is better.
    pub score: f64,
    /// Lower is better.
    pub cost: f64,
}

impl ParetoPoint {
    pub fn new(label: impl Into<String>, score: f64, cost: f64) -> Self {
        Self {
            label: label.into(),
            score,
            cost,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.score >= other.score
            && self.cost <= other.cost
            && (self.score > other.score || self.cost < other.cost)
    }
}

/// Non-dominated points, sorted by cost ascending (then score descending).
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then_with(|| b.score.total_cmp(&a.score))
    });
    // Sweep by cost: a point survives iff its score beats every cheaper point,
    // or exactly ties the running best at the same cost.
    let mut frontier: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        match frontier.last() {
            None => frontier.push(p.clone()),
            Some(last) => {
                let same = last.cost == p.cost && last.score == p.score;
                if same || p.score > last.score {
                    frontier.push(p.clone());
                }
            }
        }
    }
    frontier
}

pub fn pareto_labels(points: &[ParetoPoint]) -> Vec<String> {
    pareto_frontier(points).into_iter().map(|p| p.label).collect()
}
