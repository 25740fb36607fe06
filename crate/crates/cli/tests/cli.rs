use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rhpcfg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhpcfg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn bimodal(dir: &Path) {
    let out = rhpcfg(
        dir,
        &["make-bimodal", "--vocab", "v.txt", "--corpus", "c.jsonl"],
    );
    assert!(out.status.success());
}

#[test]
fn info_reports_node_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhpcfg(
        dir.path(),
        &["info", "--src-len", "3", "--lambda", "1", "--layers", "2"],
    );
    assert!(out.status.success());
    let v = &json_lines(&out)[0];
    assert_eq!(v["m"], 14);
    assert_eq!(v["main_chain"], serde_json::json!([1, 5, 9, 13]));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config "));

    let out = rhpcfg(dir.path(), &["info", "--src-len", "10"]);
    assert_eq!(json_lines(&out)[0]["m"], 82);
}

#[test]
fn degenerate_policy_is_reported_with_failure_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhpcfg(
        dir.path(),
        &[
            "info",
            "--src-len",
            "1",
            "--lambda",
            "1",
            "--layers",
            "1",
            "--closure",
            "on",
            "--emission",
            "leaf",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_lines(&out)[0]["derivable"], false);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rhpcfg(dir.path(), &["info"]).status.code(), Some(1));
    assert_eq!(
        rhpcfg(dir.path(), &["info", "--src-len", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        rhpcfg(
            dir.path(),
            &["info", "--src-len", "2", "--closure", "maybe"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn missing_parameter_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhpcfg(dir.path(), &["decode", "--params", "absent.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn zero_iterations_give_a_single_trace_entry() {
    let dir = tempfile::tempdir().unwrap();
    bimodal(dir.path());
    let out = rhpcfg(
        dir.path(),
        &[
            "train",
            "--src-len",
            "3",
            "--lambda",
            "1",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--params",
            "p.bin",
            "--iters",
            "0",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("p.bin.trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("iteration,corpus_loglik\n0,"));
}

#[test]
fn em_trace_is_monotone_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    bimodal(dir.path());
    let args = [
        "train",
        "--src-len",
        "3",
        "--lambda",
        "1",
        "--emission",
        "all",
        "--vocab",
        "v.txt",
        "--corpus",
        "c.jsonl",
        "--params",
        "p.bin",
        "--trace-out",
        "trace.csv",
        "--iters",
        "20",
        "--seed",
        "2",
    ];
    let first = rhpcfg(dir.path(), &args);
    assert!(first.status.success());
    let params = std::fs::read(dir.path().join("p.bin")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let trace: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(trace.len(), 21);
    assert!(trace.windows(2).all(|w| w[1] - w[0] >= -1e-9));

    let second = rhpcfg(dir.path(), &args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(params, std::fs::read(dir.path().join("p.bin")).unwrap());
}

#[test]
fn underivable_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    bimodal(dir.path());
    std::fs::write(
        dir.path().join("long.jsonl"),
        "{\"context\":0,\"target\":[\"A\"]}\n{\"context\":0,\"target\":[\"A\",\"B\",\"C\",\"A\",\"B\",\"C\",\"A\",\"B\",\"C\"]}\n",
    )
    .unwrap();
    let out = rhpcfg(
        dir.path(),
        &[
            "train",
            "--src-len",
            "1",
            "--lambda",
            "1",
            "--emission",
            "all",
            "--vocab",
            "v.txt",
            "--corpus",
            "long.jsonl",
            "--params",
            "p.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!dir.path().join("p.bin").exists());
}

#[test]
fn unique_derivation_parses_with_ratio_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("v.txt"), "A\nB\n").unwrap();
    std::fs::write(
        dir.path().join("c.jsonl"),
        "{\"context\":0,\"target\":[\"A\",\"B\"]}\n",
    )
    .unwrap();
    // m = 3: V_1 -> V_0 a V_2 and V_2 -> a are the only rules.
    let train = rhpcfg(
        dir.path(),
        &[
            "train",
            "--src-len",
            "1",
            "--lambda",
            "1",
            "--layers",
            "0",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--params",
            "p.bin",
        ],
    );
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let out = rhpcfg(
        dir.path(),
        &[
            "parse",
            "--params",
            "p.bin",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--dot-out",
            "t.dot",
        ],
    );
    assert!(out.status.success());
    let v = &json_lines(&out)[0];
    assert_eq!(v["ratio"], 1.0);
    assert_eq!(v["alignment"], serde_json::json!([1, 2]));
    let dot = std::fs::read_to_string(dir.path().join("t.dot")).unwrap();
    assert!(dot.contains("V_1 : A") && dot.contains("V_2 : B"));
}

#[test]
fn decode_reports_the_best_candidate() {
    let dir = tempfile::tempdir().unwrap();
    bimodal(dir.path());
    let train = rhpcfg(
        dir.path(),
        &[
            "train",
            "--src-len",
            "3",
            "--lambda",
            "1",
            "--emission",
            "all",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--params",
            "p.bin",
        ],
    );
    assert!(train.status.success());
    let out = rhpcfg(
        dir.path(),
        &[
            "decode",
            "--params",
            "p.bin",
            "--vocab",
            "v.txt",
            "--length-min",
            "1",
            "--length-max",
            "8",
            "--rerank",
            "per_token",
        ],
    );
    assert!(out.status.success());
    let v = &json_lines(&out)[0];
    let len = v["length"].as_u64().unwrap() as f64;
    let log_prob = v["log_prob"].as_f64().unwrap();
    assert!((v["score"].as_f64().unwrap() - log_prob / len).abs() < 1e-12);
    assert_eq!(v["tokens"].as_array().unwrap().len() as f64, len);

    let bad = rhpcfg(
        dir.path(),
        &[
            "decode",
            "--params",
            "p.bin",
            "--length-min",
            "5",
            "--length-max",
            "2",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn loglik_and_sample_emit_one_line_per_result() {
    let dir = tempfile::tempdir().unwrap();
    bimodal(dir.path());
    rhpcfg(
        dir.path(),
        &[
            "train",
            "--src-len",
            "3",
            "--lambda",
            "1",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--params",
            "p.bin",
            "--iters",
            "3",
        ],
    );
    let out = rhpcfg(
        dir.path(),
        &[
            "loglik", "--params", "p.bin", "--vocab", "v.txt", "--corpus", "c.jsonl",
        ],
    );
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 100);
    assert!(lines
        .iter()
        .enumerate()
        .all(|(i, v)| v["index"] == i && v["loglik"].as_f64().unwrap() < 0.0));

    let out = rhpcfg(
        dir.path(),
        &["sample", "--params", "p.bin", "--count", "4", "--seed", "9"],
    );
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["seed"], 12);
}

#[test]
fn oracle_check_passes_on_a_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = rhpcfg(
        dir.path(),
        &["oracle-check", "--instances", "12", "--seed", "4"],
    );
    assert_eq!(out.status.code(), Some(0));
    let lines = json_lines(&out);
    assert!(lines[..lines.len() - 1]
        .iter()
        .all(|v| v["max_deviation"].as_f64().unwrap() <= 1e-9));
    assert_eq!(lines.last().unwrap()["passed"], true);
}
