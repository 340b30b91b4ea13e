use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cypher-funnel"));
    c.env_remove("CYPHER_FUNNEL_HTTP_ENDPOINT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn synth(dir: &Path, name: &str, seed: &str) -> String {
    let out = dir.join(name);
    let path = out.to_str().unwrap().to_string();
    let o = run(&["synth", "--seed", seed, "--n-questions", "8", "--out", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn validate_reads_stdin() {
    let mut child = bin()
        .args(["validate"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"RETURN RETURN 1\nMATCH (n) RETURN n\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("rejected\tRETURN RETURN 1\t1:8"), "{}", lines[0]);
    assert_eq!(lines[1], "accepted\tMATCH (n) RETURN n");
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", "42");
    let b = synth(dir.path(), "b.jsonl", "42");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = synth(dir.path(), "c.jsonl", "7");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "42");
    let report = dir.path().join("report.json");
    let o = run(&[
        "run", "--dataset", &data, "--mode", "offline", "--grammar", "formal", "--schema-filter", "on",
        "--keep-ratio", "0.9", "--seed", "42", "--out", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["report_version"], 1);
    assert_eq!(v["config"]["inference_mode"], "offline");
    assert_eq!(v["questions"].as_array().unwrap().len(), 8);
    let counts = &v["eval"]["aggregates"]["counts"];
    let total: u64 = ["success", "runtime_error", "syntax_error", "empty"]
        .iter()
        .map(|k| counts[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 8);
}

#[test]
fn cli_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "42");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "mode = \"online\"\ngrammar = \"naive\"\nschema_filter = false\nwindow = 8\n").unwrap();
    let report = dir.path().join("r.json");
    let o = run(&[
        "run", "--dataset", &data, "--config", cfg.to_str().unwrap(), "--grammar", "formal",
        "--out", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["config"]["inference_mode"], "online");
    assert_eq!(v["config"]["grammar_variant"], "formal");
    assert_eq!(v["config"]["schema_filter"], false);
    assert_eq!(v["config"]["window"], 8);
}

#[test]
fn sweep_prints_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "42");
    let o = run(&["sweep", "--dataset", &data]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 16);
    assert_eq!(
        lines[0],
        "inference_mode,filtering,variant,rouge_l_lexical,rouge_l_exec,exec_succ_ratio,succ_pct,run_err,syn_err,empty"
    );
    assert!(lines[1].starts_with("base,none,none,"));
    assert!(lines[15].starts_with("offline,confidence,formal+schema,"));
}

#[test]
fn eval_scores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "42");
    let first: Value = serde_json::from_str(std::fs::read_to_string(&data).unwrap().lines().next().unwrap()).unwrap();
    let preds = dir.path().join("p.jsonl");
    std::fs::write(
        &preds,
        format!(
            "{}\n{}\n",
            serde_json::json!({"question_id": first["question_id"], "prediction": first["gold_query"]}),
            serde_json::json!({"question_id": "q0001", "prediction": null}),
        ),
    )
    .unwrap();
    let o = run(&["eval", "--predictions", preds.to_str().unwrap(), "--dataset", &data]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["aggregates"]["counts"]["success"], 1);
    assert_eq!(v["aggregates"]["counts"]["empty"], 1);
    assert_eq!(v["rows"][0]["rouge_l_lexical"], 1.0);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run", "--dataset", "x.jsonl", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["run", "--dataset", "/nonexistent/data.jsonl"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", "42");
    assert_eq!(run(&["run", "--dataset", &data, "--backend", "http"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--dataset", &data, "--keep-ratio", "1.5"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "colour = 3\n").unwrap();
    assert_eq!(run(&["run", "--dataset", &data, "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--p-syntax-error", "0.9", "--p-direction-error", "0.9"]).status.code(), Some(2));
}
