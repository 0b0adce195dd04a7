//! The `bootroute` binary on the demo corpus.

use std::path::PathBuf;
use std::process::Command;

fn demo(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo").join(name)
}

fn bootroute(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bootroute"))
        .arg("--config")
        .arg(demo("bootroute.toml"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn route_prints_the_answer_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (ok, stdout, stderr) = bootroute(&["--out", out, "route", "Please repeat the number 42.", "--query-id", "x"]);
    assert!(ok, "{stderr}");
    assert!(stdout.trim_end().ends_with("42."), "{stdout}");
    assert!(stderr.contains("calls 8"), "{stderr}");
    assert!(dir.path().join("x.trace.json").exists());
}

#[test]
fn bench_then_pareto() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let dataset = demo("tasks.jsonl");
    let (ok, stdout, stderr) =
        bootroute(&["--out", out.to_str().unwrap(), "bench", "--dataset", dataset.to_str().unwrap()]);
    assert!(ok, "{stderr}");
    assert!(stdout.starts_with("router: accuracy 1.0000"), "{stdout}");
    let report = out.join("report.json");
    let pareto = dir.path().join("pareto");
    let (ok, stdout, stderr) = bootroute(&[
        "--out",
        pareto.to_str().unwrap(),
        "pareto",
        report.to_str().unwrap(),
        "--point",
        "pricey:1.0:1.0",
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.starts_with("router\t1\t"), "{stdout}");
    assert!(!stdout.contains("pricey"));
}

#[test]
fn simulate_k_sweep_reports_optimum() {
    let (ok, stdout, stderr) = bootroute(&["simulate", "k-sweep", "--trials", "5000", "--lambda", "25"]);
    assert!(ok, "{stderr}");
    assert!(stdout.starts_with("k,expected_score,total_cost,objective"));
    assert!(stdout.contains("# optimal k = 1"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let (ok, _, stderr) = bootroute(&["route", "hi", "--k", "0"]);
    assert!(!ok);
    assert!(stderr.contains("router.k"), "{stderr}");
    let (ok, _, stderr) = bootroute(&["route", "hi", "--strategy", "single-best"]);
    assert!(!ok);
    assert!(stderr.contains("--model"), "{stderr}");
    let (ok, _, stderr) = bootroute(&["bench", "--dataset", "/nonexistent.jsonl"]);
    assert!(!ok);
    assert!(!stderr.is_empty());
}
