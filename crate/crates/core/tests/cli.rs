use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn skewsize(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skewsize"))
        .args(args)
        .output()
        .expect("spawn skewsize")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("JSON error line");
    serde_json::from_str(line).unwrap()
}

/// Two classes: `cat` predicted the same way for both groups, `dog`
/// confused with `wolf` only for group b.
fn small_log() -> String {
    let mut text = String::from("gt,pred,group\n");
    for group in ["a", "b"] {
        for _ in 0..20 {
            text.push_str(&format!("cat,cat,{group}\n"));
        }
        for i in 0..20 {
            let pred = if group == "b" && i < 10 { "wolf" } else { "dog" };
            text.push_str(&format!("dog,{pred},{group}\n"));
        }
        for i in 0..20 {
            let pred = if i < 15 { "bird" } else { "plane" };
            text.push_str(&format!("bird,{pred},{group}\n"));
        }
    }
    text
}

#[test]
fn audit_reports_per_class_effects() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", &small_log());
    let out = skewsize(&["audit", "--input", s(&input), "--mev", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();

    assert_eq!(report["n_records"], 120);
    let rows = report["per_class"].as_array().unwrap();
    let row = |c: &str| rows.iter().find(|r| r["class"] == c).unwrap();
    assert_eq!(row("cat")["exclusion_reason"], "dof_zero");
    assert!(row("dog")["effect_size"].as_f64().unwrap() > 0.5);
    assert_eq!(row("bird")["effect_size"].as_f64().unwrap(), 0.0);
    assert_eq!(report["aggregate"]["classes_used"], 2);
    assert_eq!(report["config_echo"]["mev_threshold"], 0.0);
}

#[test]
fn audit_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", &small_log());
    let a = skewsize(&["audit", "--input", s(&input)]);
    let b = skewsize(&["audit", "--input", s(&input)]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn audit_renders_csv_and_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", &small_log());
    let csv_out = dir.path().join("classes.csv");
    let md = skewsize(&["audit", "--input", s(&input), "--render", "markdown", "--csv-out", s(&csv_out)]);
    assert!(md.status.success());
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.contains("SkewSize"));
    assert!(text.contains("**Band histogram**"));

    let csv = fs::read_to_string(&csv_out).unwrap();
    assert!(csv.starts_with("class,n,effect_size,dof,band,excluded,exclusion_reason,accuracy,dp,eo"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn audit_reads_jsonl_with_custom_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for group in ["x", "y"] {
        for i in 0..10 {
            let pred = if group == "y" && i < 5 { "Cat " } else { "dog" };
            text.push_str(&format!("{{\"label\":\"dog\",\"guess\":\"{pred}\",\"attr\":\"{group}\"}}\n"));
        }
    }
    let input = write(dir.path(), "log.jsonl", &text);
    let out = skewsize(&[
        "audit", "--input", s(&input), "--format", "jsonl", "--label-field", "label", "--pred-field", "guess",
        "--group-field", "attr", "--lowercase", "--mev", "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_class"][0]["dof"], 1);
    assert_eq!(report["config_echo"]["canonicalization"]["lowercase"], true);
}

#[test]
fn synonyms_merge_predictions_and_are_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", "gt,pred,group\ncar,auto,a\ncar,car,b\ncar,car,a\ncar,automobile,b\n");
    let synonyms = write(dir.path(), "syn.json", r#"{"auto": "car", "automobile": "car"}"#);
    let out = skewsize(&["audit", "--input", s(&input), "--synonyms", s(&synonyms), "--mev", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_class"][0]["accuracy"], 1.0);
    assert_eq!(report["config_echo"]["synonyms_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn single_subgroup_succeeds_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", "gt,pred,group\na,a,g\na,b,g\nb,b,g\n");
    let out = skewsize(&["audit", "--input", s(&input)]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["aggregate"]["skewsize"].is_null());
    let warnings = report["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("single subgroup")));
    assert!(String::from_utf8_lossy(&out.stderr).contains("single subgroup"));
}

#[test]
fn missing_column_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", "gt,prediction,group\na,a,g\n");
    let out = skewsize(&["audit", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("pred"));
}

#[test]
fn malformed_row_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", "gt,pred,group\na,a,g\n,b,g\n");
    let out = skewsize(&["audit", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains('3'));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = skewsize(&["audit", "--input", "/nonexistent/predictions.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["exit_code"], 1);
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    let out = skewsize(&["audit", "--input", "x.csv", "--eo-mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    let out = skewsize(&["compare", "--input", "a.csv", "b.csv", "--mev-sweep", "6..2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = skewsize(&["simulate", "--scenario", "dsprites", "--strength", "0.5", "--n", "5000", "--seed", "3", "--out", s(path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(text.iter().filter(|&&c| c == b'\n').count(), 45_000 + 1);

    let sidecar: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.csv.scenario.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 3);

    let out = skewsize(&["audit", "--input", s(&a)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["config_echo"]["simulation"]["seed"], 3);
    assert_eq!(report["n_records"], 45_000);
}

#[test]
fn simulate_rejects_out_of_range_strength() {
    let dir = tempfile::tempdir().unwrap();
    let out = skewsize(&["simulate", "--strength", "1.5", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_ranks_less_biased_model_first() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = dir.path().join("m1.csv");
    let m2 = dir.path().join("m2.csv");
    for (variant, path) in [("M1", &m1), ("M2", &m2)] {
        let out = skewsize(&["simulate", "--scenario", "stereotype", "--variant", variant, "--out", s(path)]);
        assert!(out.status.success());
    }
    let out = skewsize(&["compare", "--input", s(&m2), s(&m1), "--render", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("1,") && first.contains("m1.csv"), "{text}");
}

#[test]
fn compare_with_itself_ties_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.csv");
    assert!(skewsize(&["simulate", "--scenario", "stereotype", "--out", s(&input)]).status.success());
    let out = skewsize(&["compare", "--input", s(&input), s(&input)]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let ranking = report["ranking"].as_array().unwrap();
    assert_eq!(ranking[0]["skewsize"], ranking[1]["skewsize"]);
    assert_eq!(ranking[0]["input_index"], 0);
}

#[test]
fn compare_needs_two_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "log.csv", &small_log());
    let out = skewsize(&["compare", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
}
