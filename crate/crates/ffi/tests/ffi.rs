use std::ffi::{CStr, CString};
use std::ptr;

use bootroute_ffi::*;

fn last_error() -> String {
    let p = br_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn mock_config(dir: &std::path::Path, broken: bool) -> CString {
    let reply = if broken {
        r#"{ "text": "x", "error_at": 1 }"#
    } else {
        r#"{ "generate": { "tokens": 300 }, "chunk_tokens": 7 }"#
    };
    let scripts = format!(
        r#"{{ "scripts": {{
            "a": {{ "replies": [ {reply} ] }},
            "b": {{ "replies": [ {reply} ] }},
            "sel": {{ "replies": [ {{ "text": "[LLM2, LLM1]" }} ] }},
            "agg": {{ "replies": [ {{ "text": "merged answer" }} ] }}
        }} }}"#
    );
    let path = dir.join("mocks.json");
    std::fs::write(&path, scripts).unwrap();
    let toml = format!(
        r#"
seed = 3
mock_scripts = "{}"

[[pool]]
model_id = "a"
endpoint = "mock://a"
price_per_million_tokens = 1.10

[[pool]]
model_id = "b"
endpoint = "mock://b"
price_per_million_tokens = 0.88

[[auxiliary]]
model_id = "sel"
endpoint = "mock://sel"
price_per_million_tokens = 0.5

[[auxiliary]]
model_id = "agg"
endpoint = "mock://agg"
price_per_million_tokens = 2.2

[router]
k = 1
layers = 1
boot_budget = 50
lambda = 0.0
selector_model = "sel"
aggregator_model = "agg"
"#,
        path.display()
    );
    CString::new(toml).unwrap()
}

#[test]
fn routes_through_a_handle() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(dir.path(), false);
    let mut router = ptr::null_mut();
    unsafe {
        assert_eq!(br_router_new_from_str(config.as_ptr(), true, &mut router), BrStatus::Ok);
        let mut trace = ptr::null_mut();
        let id = CString::new("q1").unwrap();
        let text = CString::new("What is 2+2?").unwrap();
        assert_eq!(br_route(router, id.as_ptr(), text.as_ptr(), &mut trace), BrStatus::Ok);
        assert_eq!(CStr::from_ptr(br_trace_final_text(trace)).to_str().unwrap(), "merged answer");
        // 2 boot + 1 full + 1 selector + 1 aggregator
        assert_eq!(br_trace_call_count(trace), 5);
        assert!(br_trace_total_tokens(trace) > 0);
        let cost = CStr::from_ptr(br_trace_cost(trace)).to_str().unwrap();
        assert!(cost.parse::<f64>().unwrap() > 0.0);
        let json = br_trace_to_json(trace);
        let parsed: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(parsed["query_id"], "q1");
        br_string_free(json);
        br_trace_free(trace);
        br_router_free(router);
    }
}

#[test]
fn total_failure_returns_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(dir.path(), true);
    let mut router = ptr::null_mut();
    unsafe {
        assert_eq!(br_router_new_from_str(config.as_ptr(), true, &mut router), BrStatus::Ok);
        let mut trace = ptr::null_mut();
        let id = CString::new("q").unwrap();
        let text = CString::new("hi").unwrap();
        let status = br_route(router, id.as_ptr(), text.as_ptr(), &mut trace);
        assert_eq!(status, BrStatus::AllCandidatesFailed);
        assert!(last_error().contains("layer 1"));
        assert!(!trace.is_null());
        assert_eq!(br_trace_call_count(trace), 2);
        br_trace_free(trace);
        br_router_free(router);
    }
}

#[test]
fn argument_errors_are_reported() {
    unsafe {
        let mut router = ptr::null_mut();
        assert_eq!(br_router_new_from_str(ptr::null(), true, &mut router), BrStatus::NullArgument);
        assert!(last_error().contains("source"));
        let bad = CString::new("[router]\nk = 0").unwrap();
        assert_eq!(br_router_new_from_str(bad.as_ptr(), true, &mut router), BrStatus::Config);
        let missing = CString::new("/nonexistent/config.toml").unwrap();
        assert_eq!(br_router_new_from_file(missing.as_ptr(), &mut router), BrStatus::Config);
        let invalid = [0xffu8, 0];
        assert_eq!(
            br_router_new_from_str(invalid.as_ptr().cast(), true, &mut router),
            BrStatus::InvalidUtf8
        );
        assert!(router.is_null());
        assert!(br_trace_final_text(ptr::null()).is_null());
        assert_eq!(br_trace_call_count(ptr::null()), 0);
        br_trace_free(ptr::null_mut());
        br_router_free(ptr::null_mut());
        br_string_free(ptr::null_mut());
    }
}

#[test]
fn pure_helpers() {
    unsafe {
        let scores = [0.80, 0.86, 0.88, 0.885];
        let costs = [0.002, 0.003, 0.004, 0.005];
        let mut k = 0usize;
        assert_eq!(br_optimal_k(scores.as_ptr(), costs.as_ptr(), 4, 25.0, &mut k), BrStatus::Ok);
        assert_eq!(k, 2);
        assert_eq!(br_optimal_k(scores.as_ptr(), costs.as_ptr(), 0, 25.0, &mut k), BrStatus::InvalidArgument);

        let mut err = 0.0;
        assert_eq!(br_cumulative_error([0.9, 0.9].as_ptr(), 2, &mut err), BrStatus::Ok);
        assert_eq!(err, 0.19);
        assert_eq!(br_cumulative_error([1.5].as_ptr(), 1, &mut err), BrStatus::InvalidArgument);

        let s = [0.9, 0.8, 0.7];
        let c = [3.0, 1.0, 2.0];
        let mut mask = [9u8; 3];
        assert_eq!(br_pareto_frontier(s.as_ptr(), c.as_ptr(), 3, mask.as_mut_ptr()), BrStatus::Ok);
        assert_eq!(mask, [1, 1, 0]);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/bootroute.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["br_route", "br_router_new_from_file", "br_trace_free", "BR_STATUS_OK", "typedef struct BrRouter BrRouter"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
