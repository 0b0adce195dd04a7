//! Benchmark harness: task datasets, answer scoring, benchmark and sweep
//! runs, Pareto output, and the HTTP routing service.

mod bench;
mod plot;
pub mod serve;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::types::Query;

pub use bench::{
    run_benchmark, run_sweep, write_run, write_sweep_csv, BenchRun, ReportAggregate, RunReport, SweepAxis,
    SweepRun, SweepTag, TaskResult, REPORT_SCHEMA_VERSION,
};
pub use plot::{emit_pareto, render_svg, report_point, write_pareto_csv};

/// Bump when [`normalize_answer`] or the numeric extraction changes.
pub const NORMALIZATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    ExactMatch,
    NumericMatch,
    Contains,
    /// Scored outside this tool; results carry no verdict.
    External,
}

/// One line of a JSONL dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub scorer: Scorer,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub capabilities: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TaskRecord {
    pub fn query(&self) -> Query {
        Query::new(&self.task_id, &self.prompt).requiring(self.capabilities.iter().cloned())
    }

    fn validate(&self) -> Result<(), String> {
        if self.task_id.trim().is_empty() {
            return Err("task_id is empty".into());
        }
        if self.prompt.trim().is_empty() {
            return Err("prompt is empty".into());
        }
        if self.scorer != Scorer::External && self.reference.as_deref().is_none_or(|r| r.trim().is_empty()) {
            return Err(format!("scorer {:?} needs a non-empty reference", self.scorer));
        }
        Ok(())
    }
}

/// Parses JSONL, skipping blank lines. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<TaskRecord>, HarnessError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| HarnessError::Dataset { line: i + 1, message };
        let record: TaskRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(err)?;
        if !ids.insert(record.task_id.clone()) {
            return Err(err(format!("duplicate task_id '{}'", record.task_id)));
        }
        out.push(record);
    }
    if out.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TaskRecord>, HarnessError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// Trims, collapses whitespace runs to one space, and strips trailing
/// punctuation.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', ',', '!', '?', ';', ':'])
        .trim_end()
        .to_string()
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d[\d,]*\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());

/// Last numeral in `text`, with thousands separators removed.
pub fn last_number(text: &str) -> Option<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().replace(',', "").trim_end_matches('.').parse::<f64>().ok())
        .last()
}

fn numbers_match(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-6 * a.abs().max(b.abs())
}

/// Verdict and, when not correct, why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Score {
    pub correct: Option<bool>,
    pub reason: Option<String>,
}

pub fn score_with_reason(final_text: &str, record: &TaskRecord) -> Score {
    let reference = record.reference.as_deref().unwrap_or_default();
    let verdict = |ok: bool, why: &str| Score {
        correct: Some(ok),
        reason: (!ok).then(|| why.to_string()),
    };
    match record.scorer {
        Scorer::External => Score {
            correct: None,
            reason: None,
        },
        Scorer::ExactMatch => verdict(
            normalize_answer(final_text) == normalize_answer(reference),
            "normalized answer differs from reference",
        ),
        Scorer::Contains => verdict(
            normalize_answer(final_text).contains(&normalize_answer(reference)),
            "reference not found in answer",
        ),
        Scorer::NumericMatch => match (last_number(final_text), last_number(reference)) {
            (None, _) => verdict(false, "no numeral in answer"),
            (_, None) => verdict(false, "no numeral in reference"),
            (Some(a), Some(b)) => verdict(numbers_match(a, b), "number differs from reference"),
        },
    }
}

/// `Some(correct)`, or `None` for externally scored tasks.
pub fn score_answer(final_text: &str, record: &TaskRecord) -> Option<bool> {
    score_with_reason(final_text, record).correct
}
