use std::path::Path;
use std::process::{Command, Output};

use hmsg::eval::InstructionRecord;
use hmsg::slow::NavGoal;

fn hmsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmsg")).args(args).env_remove("HMSG_OFFLINE").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hmsg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hmsg(args).status.code().unwrap()
}

fn scene(dir: &Path, seed: u64, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let seed = seed.to_string();
    let mut args = vec!["synth", "--seed", &seed, "--out-dir", d];
    args.extend_from_slice(extra);
    ok(&args);
    let (layout, graph, truth) = (dir.join("layout.json"), dir.join("graph.json"), dir.join("truth.json"));
    ok(&[
        "build",
        "--layout",
        layout.to_str().unwrap(),
        "--out",
        graph.to_str().unwrap(),
        "--offline",
        "--truth",
        truth.to_str().unwrap(),
    ]);
}

#[test]
fn query_matches_golden_document() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 7, &[]);
    let graph = dir.path().join("graph.json");
    let out = ok(&["query", "--graph", graph.to_str().unwrap(), "--offline", "--text", "go to the wall clock"]);
    let golden = include_str!("golden/query_seed7.json");
    assert_eq!(out, golden);
    let goal: NavGoal = serde_json::from_str(&out).unwrap();
    let dataset: Vec<InstructionRecord> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dataset.json")).unwrap()).unwrap();
    let rec = dataset.iter().find(|r| r.text == "go to the wall clock").unwrap();
    assert_eq!(goal.object_id, rec.gt_object_id);
    assert_eq!(goal.position, rec.gt_position);
    assert!(goal.reasoner_calls <= 2);
    assert!(goal.elapsed_s.is_none());
}

#[test]
fn identical_runs_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    scene(a.path(), 21, &["--sigma", "2.75", "--sigma-view", "1"]);
    scene(b.path(), 21, &["--sigma", "2.75", "--sigma-view", "1"]);
    for f in ["layout.json", "dataset.json", "truth.json", "graph.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let dataset: Vec<InstructionRecord> =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("dataset.json")).unwrap()).unwrap();
    for rec in dataset.iter().step_by(5) {
        let run = |dir: &Path| {
            let g = dir.join("graph.json");
            let t = dir.join("truth.json");
            ok(&["query", "--graph", g.to_str().unwrap(), "--truth", t.to_str().unwrap(), "--offline", "--text", &rec.text])
        };
        assert_eq!(run(a.path()), run(b.path()), "{}", rec.text);
    }
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 3, &[]);
    let g = dir.path().join("graph.json");
    let out = ok(&["query", "--graph", g.to_str().unwrap(), "--offline", "--timing", "--text", "find the chair"]);
    let goal: NavGoal = serde_json::from_str(&out).unwrap();
    assert!(goal.elapsed_s.is_some_and(|s| s >= 0.0));
}

#[test]
fn validate_plan_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 5, &["--sigma", "1.0"]);
    let g = dir.path().join("graph.json");
    let g = g.to_str().unwrap();
    assert_eq!(ok(&["validate", "--graph", g]), "0 violations\n");

    let plan: serde_json::Value = serde_json::from_str(&ok(&["plan", "--graph", g, "--from", "0,-1,1.2", "--to-view", "v000"])).unwrap();
    assert_eq!(plan["to_view"], "v000");
    assert_eq!(plan["views"].as_array().unwrap().len(), plan["waypoints"].as_array().unwrap().len());

    let report = dir.path().join("report.json");
    let d = dir.path().join("dataset.json");
    let table = ok(&[
        "eval", "--graph", g, "--dataset", d.to_str().unwrap(), "--pipeline", "fast", "--offline", "--seed", "1",
        "--out", report.to_str().unwrap(),
    ]);
    assert!(table.lines().any(|l| l.trim_start().starts_with("all")));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["pipeline"], "fast");
    assert_eq!(r["overall"]["sr"], r["overall"]["rsr"][0][0]);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 5, &[]);
    let g = dir.path().join("graph.json");
    let g = g.to_str().unwrap();
    assert_eq!(code(&["query", "--unknown-flag"]), 2);
    assert_eq!(code(&["plan", "--graph", g, "--from", "1,2", "--to-view", "v000"]), 2);
    assert_eq!(code(&["eval", "--graph", g, "--dataset", g, "--pipeline", "slowest", "--out", "x"]), 2);
    assert_eq!(code(&["plan", "--graph", g, "--from", "0,0,0", "--to-view", "v999"]), 3);
    assert_eq!(code(&["query", "--graph", g, "--offline", "--text", "  "]), 3);

    // remote providers without configuration
    let out = Command::new(env!("CARGO_BIN_EXE_hmsg"))
        .args(["query", "--graph", g, "--text", "find the chair"])
        .env_remove("HMSG_OFFLINE")
        .env_remove("HMSG_EMBED_URL")
        .env_remove("HMSG_LLM_URL")
        .env_remove("HMSG_VLM_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    // HMSG_OFFLINE=1 stands in for --offline
    let out = Command::new(env!("CARGO_BIN_EXE_hmsg"))
        .args(["query", "--graph", g, "--text", "find the chair"])
        .env("HMSG_OFFLINE", "1")
        .output()
        .unwrap();
    assert!(out.status.success());

    // unreachable goal: no edges at all
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("graph.json")).unwrap()).unwrap();
    doc["view_edges"] = serde_json::json!([]);
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(code(&["plan", "--graph", cut.to_str().unwrap(), "--from", "0,-1,1.2", "--to-view", "v010"]), 5);

    // a broken graph fails validation with a count
    doc["views"][0]["pose"]["orientation"] = serde_json::json!([3.0, 0.0, 0.0, 0.0]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = hmsg(&["validate", "--graph", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("1 violations"));
    assert_eq!(code(&["query", "--graph", bad.to_str().unwrap(), "--offline", "--text", "x"]), 3);
    assert_eq!(code(&["validate", "--graph", "/nonexistent/graph.json"]), 1);
}
