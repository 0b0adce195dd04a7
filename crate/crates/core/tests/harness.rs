//! Benchmark, sweep and Pareto output against the demo corpus.

use std::path::PathBuf;

use bootroute::harness::{
    emit_pareto, load_dataset, report_point, run_benchmark, run_sweep, write_run, write_sweep_csv, SweepAxis,
};
use bootroute::{load_config_file, ModelClient, Purpose, RouterConfig, StrategyChoice};

fn demo(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo").join(name)
}

fn setup() -> (ModelClient, RouterConfig) {
    let config = load_config_file(&demo("bootroute.toml")).unwrap();
    assert!(config.mock_scripts.as_ref().unwrap().is_absolute() || config.mock_scripts.as_ref().unwrap().exists());
    (ModelClient::from_config(&config).unwrap(), config)
}

#[tokio::test]
async fn bench_writes_report_and_traces() {
    let (client, config) = setup();
    let tasks = load_dataset(&demo("tasks.jsonl")).unwrap();
    assert_eq!(tasks.len(), 10);
    let run = run_benchmark(&client, &tasks, &config, &StrategyChoice::Router, 4).await.unwrap();
    let a = &run.report.aggregate;
    assert_eq!((a.tasks, a.scored, a.failed), (10, 10, 0));
    assert_eq!(a.accuracy, Some(1.0));
    let traced: rust_decimal::Decimal = run.traces.iter().map(|(_, t)| t.as_ref().unwrap().ledger.totals().currency).sum();
    assert_eq!(a.total_cost, traced);

    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &run).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "router");
    assert_eq!(std::fs::read_dir(dir.path().join("traces")).unwrap().count(), 10);
}

#[tokio::test]
async fn baselines_answer_every_task() {
    let (client, config) = setup();
    let tasks = load_dataset(&demo("tasks.jsonl")).unwrap();
    let all = run_benchmark(&client, &tasks, &config, &StrategyChoice::AllFull, 4).await.unwrap();
    assert_eq!(all.report.aggregate.calls_by_purpose[&Purpose::Continuation], 40);
    assert_eq!(all.report.aggregate.calls_by_purpose[&Purpose::Aggregation], 10);
    let single = StrategyChoice::SingleBest("deepseek-v3".into());
    let one = run_benchmark(&client, &tasks, &config, &single, 4).await.unwrap();
    assert_eq!(one.report.label, "single-best:deepseek-v3");
    assert_eq!(one.report.aggregate.calls_by_purpose.values().sum::<usize>(), 10);
    let unknown = run_benchmark(&client, &tasks, &config, &StrategyChoice::SingleBest("nope".into()), 4)
        .await
        .unwrap();
    assert_eq!(unknown.report.aggregate.failed, 10);
    assert_eq!(unknown.report.aggregate.accuracy, Some(0.0));
}

#[tokio::test]
async fn budget_sweep_scales_boot_tokens() {
    let (client, config) = setup();
    let tasks = load_dataset(&demo("tasks.jsonl")).unwrap();
    let sweep = run_sweep(&client, &tasks, &config, SweepAxis::BootBudget, &[8, 16, 32], 2).await.unwrap();
    // Only the long-winded model is still streaming at these budgets; it
    // sends 8-token chunks, so its boot cost is exactly the budget.
    let boot: Vec<u64> = sweep
        .runs
        .iter()
        .map(|r| {
            r.traces
                .iter()
                .flat_map(|(_, t)| t.as_ref().unwrap().calls().cloned().collect::<Vec<_>>())
                .filter(|c| c.purpose == Purpose::Boot && c.model_id == "qwen2.5-max")
                .map(|c| c.completion_tokens)
                .sum()
        })
        .collect();
    assert_eq!(boot, [80, 160, 320]);

    let mut csv = Vec::new();
    write_sweep_csv(&sweep, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("axis,value,accuracy,"));
    assert_eq!(csv.lines().count(), 4);
}

#[tokio::test]
async fn k_and_layer_sweeps_follow_the_call_law() {
    let (client, config) = setup();
    let tasks = load_dataset(&demo("tasks.jsonl")).unwrap();
    let sweep = run_sweep(&client, &tasks, &config, SweepAxis::K, &[1, 2, 3, 4, 9], 4).await.unwrap();
    assert_eq!(sweep.runs.len(), 4);
    assert_eq!(sweep.skipped.len(), 1);
    for (k, run) in (1..).zip(&sweep.runs) {
        assert_eq!(run.report.aggregate.calls_by_purpose[&Purpose::Continuation], 10 * k);
    }
    let layers = run_sweep(&client, &tasks, &config, SweepAxis::Layers, &[1, 3], 4).await.unwrap();
    for (l, run) in [1usize, 3].iter().zip(&layers.runs) {
        let calls: usize = run.report.aggregate.calls_by_purpose.values().sum();
        assert_eq!(calls, 10 * (4 + 2 * l + 2 * l));
    }

    let dir = tempfile::tempdir().unwrap();
    let points: Vec<_> = sweep.runs.iter().map(|r| report_point(&r.report)).collect();
    let frontier = emit_pareto(&points, dir.path()).unwrap();
    assert!(!frontier.is_empty());
    assert!(dir.path().join("pareto.csv").exists());
    assert!(std::fs::read_to_string(dir.path().join("pareto.svg")).unwrap().starts_with("<svg"));
}
