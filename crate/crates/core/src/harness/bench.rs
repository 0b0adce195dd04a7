//! Benchmark and sweep runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use futures::stream::{self, StreamExt};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{score_with_reason, TaskRecord, NORMALIZATION_VERSION};
use crate::client::ModelClient;
use crate::config::{Overrides, RouterConfig};
use crate::cost::present_currency;
use crate::error::HarnessError;
use crate::pipeline::{Router, StrategyChoice};
use crate::types::{Purpose, RoutingTrace, Strategy};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub final_text: String,
    /// `None` for externally scored tasks.
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Set when routing failed; the task counts as incorrect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tokens: u64,
    pub currency: Decimal,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAggregate {
    pub tasks: usize,
    pub scored: usize,
    pub correct: usize,
    pub failed: usize,
    /// `correct / scored`; `None` when nothing was scored.
    pub accuracy: Option<f64>,
    pub total_tokens: u64,
    pub total_cost: Decimal,
    pub mean_cost_per_query: Decimal,
    pub tokens_by_purpose: BTreeMap<Purpose, u64>,
    pub calls_by_purpose: BTreeMap<Purpose, usize>,
}

/// Swept parameter and its value for one report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepTag {
    pub axis: SweepAxis,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub normalization_version: u32,
    pub label: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTag>,
    pub tasks: Vec<TaskResult>,
    pub aggregate: ReportAggregate,
    pub config: RouterConfig,
}

/// A report and the traces behind it, in dataset order. Failed tasks keep
/// their partial trace when one exists.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: RunReport,
    pub traces: Vec<(String, Option<RoutingTrace>)>,
}

fn task_result(task: &TaskRecord, outcome: &Result<RoutingTrace, crate::error::RouteError>) -> TaskResult {
    let (trace, error) = match outcome {
        Ok(t) => (Some(t), None),
        Err(e) => (e.partial_trace(), Some(e.to_string())),
    };
    let totals = trace.map(|t| t.ledger.totals());
    let mut result = TaskResult {
        task_id: task.task_id.clone(),
        final_text: String::new(),
        correct: Some(false),
        reason: None,
        error,
        tokens: totals.as_ref().map_or(0, |t| t.tokens),
        currency: totals.as_ref().map_or(Decimal::ZERO, |t| t.currency),
        calls: trace.map_or(0, RoutingTrace::call_count),
    };
    if result.error.is_some() {
        result.correct = (task.scorer != super::Scorer::External).then_some(false);
        result.reason = Some("routing failed".into());
    } else if let Some(t) = trace {
        let score = score_with_reason(&t.final_text, task);
        result.final_text = t.final_text.clone();
        result.correct = score.correct;
        result.reason = score.reason;
    }
    result
}

fn aggregate(results: &[TaskResult], traces: &[(String, Option<RoutingTrace>)]) -> ReportAggregate {
    let scored = results.iter().filter(|r| r.correct.is_some()).count();
    let correct = results.iter().filter(|r| r.correct == Some(true)).count();
    let total_cost: Decimal = results.iter().map(|r| r.currency).sum();
    let mut tokens_by_purpose = BTreeMap::new();
    let mut calls_by_purpose = BTreeMap::new();
    for trace in traces.iter().filter_map(|(_, t)| t.as_ref()) {
        for (p, n) in trace.ledger.tokens_by_purpose() {
            *tokens_by_purpose.entry(p).or_insert(0) += n;
        }
        for c in trace.calls() {
            *calls_by_purpose.entry(c.purpose).or_insert(0) += 1;
        }
    }
    ReportAggregate {
        tasks: results.len(),
        scored,
        correct,
        failed: results.iter().filter(|r| r.error.is_some()).count(),
        accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
        total_tokens: results.iter().map(|r| r.tokens).sum(),
        total_cost,
        mean_cost_per_query: if results.is_empty() {
            Decimal::ZERO
        } else {
            total_cost / Decimal::from(results.len())
        },
        tokens_by_purpose,
        calls_by_purpose,
    }
}

/// Routes every task with at most `concurrency` pipelines in flight. Results
/// keep dataset order regardless of completion order.
pub async fn run_benchmark(
    client: &ModelClient,
    dataset: &[TaskRecord],
    config: &RouterConfig,
    strategy: &StrategyChoice,
    concurrency: usize,
) -> Result<BenchRun, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let router = Router::new(client.clone(), config.clone());
    let outcomes: Vec<_> = stream::iter(dataset.iter().map(|task| {
        let router = &router;
        async move { router.run(&task.query(), strategy).await }
    }))
    .buffered(concurrency.max(1))
    .collect()
    .await;

    let results: Vec<TaskResult> = dataset.iter().zip(&outcomes).map(|(t, o)| task_result(t, o)).collect();
    let traces: Vec<(String, Option<RoutingTrace>)> = dataset
        .iter()
        .zip(outcomes)
        .map(|(t, o)| {
            let trace = match o {
                Ok(trace) => Some(trace),
                Err(crate::error::RouteError::AllCandidatesFailed { trace, .. }) => Some(*trace),
                Err(_) => None,
            };
            (t.task_id.clone(), trace)
        })
        .collect();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        normalization_version: NORMALIZATION_VERSION,
        label: strategy_label(strategy),
        strategy: strategy.strategy(),
        sweep: None,
        aggregate: aggregate(&results, &traces),
        tasks: results,
        config: config.clone(),
    };
    Ok(BenchRun { report, traces })
}

fn strategy_label(strategy: &StrategyChoice) -> String {
    match strategy {
        StrategyChoice::SingleBest(m) => format!("single-best:{m}"),
        other => other.strategy().to_string(),
    }
}

/// Writes `report.json` and `traces/<task_id>.json` under `dir`.
pub fn write_run(dir: &Path, run: &BenchRun) -> Result<(), HarnessError> {
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;
    for (id, trace) in &run.traces {
        if let Some(t) = trace {
            let name: String = id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                .collect();
            std::fs::write(traces_dir.join(format!("{name}.json")), serde_json::to_string_pretty(t)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    BootBudget,
    Layers,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::BootBudget => "boot_budget",
            SweepAxis::Layers => "layers",
        }
    }

    fn overrides(self, value: u64) -> Overrides {
        let mut o = Overrides::default();
        match self {
            SweepAxis::K => o.k = Some(value as usize),
            SweepAxis::BootBudget => o.boot_budget = Some(u32::try_from(value).unwrap_or(u32::MAX)),
            SweepAxis::Layers => o.layers = Some(value as usize),
        }
        o
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(SweepAxis::K),
            "boot_budget" | "budget" => Ok(SweepAxis::BootBudget),
            "layers" | "l" => Ok(SweepAxis::Layers),
            other => Err(format!("unknown sweep axis '{other}' (expected k, boot_budget or layers)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub axis: SweepAxis,
    pub runs: Vec<BenchRun>,
    /// Values rejected by config validation, with the reason.
    pub skipped: Vec<(u64, String)>,
}

/// One router benchmark per value of `axis`.
pub async fn run_sweep(
    client: &ModelClient,
    dataset: &[TaskRecord],
    config: &RouterConfig,
    axis: SweepAxis,
    values: &[u64],
    concurrency: usize,
) -> Result<SweepRun, HarnessError> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for &value in values {
        let cfg = match config.with_overrides(&axis.overrides(value)) {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!(axis = axis.name(), value, error = %e, "skipping sweep value");
                skipped.push((value, e.to_string()));
                continue;
            }
        };
        let mut run = run_benchmark(client, dataset, &cfg, &StrategyChoice::Router, concurrency).await?;
        run.report.sweep = Some(SweepTag { axis, value });
        run.report.label = format!("{}={value}", axis.name());
        runs.push(run);
    }
    Ok(SweepRun { axis, runs, skipped })
}

#[derive(Serialize)]
struct SweepRow<'a> {
    axis: &'a str,
    value: u64,
    accuracy: Option<f64>,
    mean_cost_per_query: Decimal,
    total_cost: Decimal,
    total_tokens: u64,
    boot_tokens: u64,
    calls: usize,
}

/// `axis,value,accuracy,mean_cost_per_query,total_cost,total_tokens,boot_tokens,calls`
pub fn write_sweep_csv<W: Write>(sweep: &SweepRun, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for run in &sweep.runs {
        let a = &run.report.aggregate;
        w.serialize(SweepRow {
            axis: sweep.axis.name(),
            value: run.report.sweep.map_or(0, |s| s.value),
            accuracy: a.accuracy,
            mean_cost_per_query: present_currency(a.mean_cost_per_query),
            total_cost: present_currency(a.total_cost),
            total_tokens: a.total_tokens,
            boot_tokens: a.tokens_by_purpose.get(&Purpose::Boot).copied().unwrap_or(0),
            calls: a.calls_by_purpose.values().sum(),
        })?;
    }
    w.flush()?;
    Ok(())
}
