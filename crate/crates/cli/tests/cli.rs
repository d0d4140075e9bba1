//! End-to-end runs of the `llmrl` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn llmrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmrl"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const CHAIN: &str = r#"{
    "id": "chain",
    "env": {"kind": "chain"},
    "agent": "dqn",
    "seeds": [3, 4],
    "episodes": 12
}"#;

const DESIGN: &str = r#"{
    "id": "design",
    "env": {"kind": "uav", "scenario": {"horizon": 5}},
    "agent": "td3",
    "seeds": [0],
    "episodes": 1,
    "reward": {
        "mode": "llm-designed",
        "design": {
            "task": {"description": "Reduce UAV energy use."},
            "features": ["energy", "position_score", "penalty"],
            "ranges": {"energy": [0, 100], "position_score": [0, 1], "penalty": [1, 2]}
        }
    },
    "backend": {"kind": "mock", "design_path": "replies.json"}
}"#;

const REPLIES: &str = r#"[
    "{\"explanation\": \"a\", \"reward_expression\": \"-altitude*energy\"}",
    "{\"explanation\": \"b\", \"reward_expression\": \"-energy - 0.1*penalty\"}",
    "{\"explanation\": \"c\", \"reward_expression\": \"-(w1*energy+w2*position_score)*penalty\"}"
]"#;

#[test]
fn run_writes_one_directory_per_seed_and_compare_reports_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain.json", CHAIN);
    let out = dir.path().join("out");
    let o = llmrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("seed")).count(), 2);
    for seed in [3, 4] {
        let episodes = std::fs::read_to_string(out.join(format!("chain/seed-{seed}/episodes.jsonl"))).unwrap();
        assert_eq!(episodes.lines().count(), 12);
        assert!(out.join(format!("chain/seed-{seed}/summary.json")).exists());
    }

    let run = out.join("chain");
    let csv = dir.path().join("cmp.csv");
    let o = llmrl(&[
        "compare",
        "--a",
        run.to_str().unwrap(),
        "--b",
        run.to_str().unwrap(),
        "--window",
        "5",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c["wins_a"], 0);
    assert_eq!(c["ties"], 2);
    assert_eq!(c["improvement"], 0.0);
    let table = std::fs::read_to_string(csv).unwrap();
    assert_eq!(table.lines().next(), Some("metric,window,arm,seed,final_mean,std"));
    // Two arms of two seeds, then one aggregate row per arm.
    assert_eq!(table.lines().count(), 7);
    assert_eq!(table.lines().filter(|l| l.contains(",all,")).count(), 2);
}

#[test]
fn seed_override_replaces_the_configured_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain.json", CHAIN);
    let out = dir.path().join("out");
    let o = llmrl(&["run", "--config", &cfg, "--seeds", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("chain/seed-9").exists());
    assert!(!out.join("chain/seed-3").exists());
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &CHAIN.replace("\"episodes\": 12", "\"episodes\": 0"));
    assert_eq!(llmrl(&["run", "--config", &bad]).status.code(), Some(2));
    let unknown = write(dir.path(), "unknown.json", &CHAIN.replace("\"episodes\"", "\"epochs\": 1, \"episodes\""));
    assert_eq!(llmrl(&["run", "--config", &unknown]).status.code(), Some(2));
    let mismatch = write(dir.path(), "mismatch.json", &CHAIN.replace("\"dqn\"", "\"td3\""));
    assert_eq!(llmrl(&["run", "--config", &mismatch]).status.code(), Some(2));
    let dup = write(dir.path(), "dup.json", CHAIN);
    assert_eq!(llmrl(&["run", "--config", &dup, "--seeds", "1,1"]).status.code(), Some(2));
}

#[test]
fn compare_rejects_mismatched_windows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain.json", CHAIN);
    let out = dir.path().join("out");
    assert!(llmrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let run = out.join("chain");
    let o = llmrl(&["compare", "--a", run.to_str().unwrap(), "--b", run.to_str().unwrap(), "--window", "50"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn design_reward_prints_and_writes_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "replies.json", REPLIES);
    let cfg = write(dir.path(), "design.json", DESIGN);
    let out = dir.path().join("out");
    let o = llmrl(&["design-reward", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed: Vec<Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(printed.len(), 3);
    assert_eq!(printed.iter().filter(|c| c["selected"] == true).count(), 1);
    assert_eq!(printed[0]["selected"], false);
    let ledger = std::fs::read_to_string(out.join("design/candidates.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 3);
    assert!(out.join("design/design_audit.jsonl").exists());
}

#[test]
fn unreachable_model_backend_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "replies.json", REPLIES);
    let cfg = write(dir.path(), "design.json", DESIGN);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let o = llmrl(&[
        "design-reward",
        "--config",
        &cfg,
        "--backend",
        "http",
        "--base-url",
        &url,
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn http_backend_without_an_endpoint_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "replies.json", REPLIES);
    let cfg = write(dir.path(), "design.json", DESIGN);
    assert_eq!(llmrl(&["design-reward", "--config", &cfg, "--backend", "http"]).status.code(), Some(2));
}

#[test]
fn shipped_designer_config_selects_the_valid_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/uav_td3_designed.json");
    let o = llmrl(&["design-reward", "--config", cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let selected: Vec<Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|c| c["selected"] == true)
        .collect();
    assert_eq!(selected.len(), 1);
    assert_eq!(selected[0]["index"], 2);
}
