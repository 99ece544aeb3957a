use std::fs;
use std::path::Path;

use medcbr::cli::{run_from_args, CliError, RunSummary};

fn run(args: &[&str]) -> Result<(), CliError> {
    let mut full = vec!["medcbr"];
    full.extend_from_slice(args);
    run_from_args(full)
}

fn synth(dir: &Path, n: &str) -> String {
    let out = dir.to_str().unwrap();
    run(&["synth", "--out", out, "--n", n, "--concepts", "6", "--seed", "0"]).unwrap();
    format!("{out}/run.toml")
}

fn summary(dir: &Path) -> RunSummary {
    serde_json::from_str(&fs::read_to_string(dir.join("run/summary.json")).unwrap()).unwrap()
}

#[test]
fn enrich_twice_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "60");
    run(&["enrich", "-c", &config]).unwrap();
    let first = summary(dir.path()).commands["enrich"].details["hit_rate"].as_f64().unwrap();
    run(&["enrich", "-c", &config]).unwrap();
    let second = summary(dir.path()).commands["enrich"].details["hit_rate"].as_f64().unwrap();
    assert_eq!(first, 0.0);
    assert_eq!(second, 100.0);
    let reports = fs::read_to_string(dir.path().join("run/enrich/reports.json")).unwrap();
    assert!(reports.contains("S00001"));
}

#[test]
fn unseal_without_export_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "40");
    let err = run(&["review-unseal", "-c", &config]).unwrap_err();
    assert!(matches!(err, CliError::Missing(_)), "{err}");
    assert!(err.to_string().contains("review-export"));
}

#[test]
fn unknown_command_is_an_argument_error() {
    let err = run(&["frobnicate"]).unwrap_err();
    assert!(matches!(err, CliError::Config { ref field, .. } if field == "arguments"), "{err}");
}

#[test]
fn concept_count_mismatch_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "40");
    let err = run(&["prepare", "-c", &config, "--set", "model.encoder.n_concepts=5"]).unwrap_err();
    assert!(err.to_string().contains("model.encoder.n_concepts"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "40");
    assert!(run(&["prepare", "-c", &config, "--set", "corpus.nonsense=1"]).is_err());
}

#[test]
fn full_pipeline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "120");
    let fast = ["--set", "model.train.epochs=4", "--set", "model.train.warmup_epochs=1"];
    let with = |args: &[&str]| {
        let mut v: Vec<&str> = args.to_vec();
        v.extend_from_slice(&fast);
        run(&v)
    };
    with(&["prepare", "-c", &config]).unwrap();
    with(&["enrich", "-c", &config]).unwrap();
    with(&["train", "-c", &config, "--fold", "0"]).unwrap();
    with(&["eval", "-c", &config]).unwrap();
    with(&["reason", "-c", &config, "--fold", "0"]).unwrap();
    with(&["review-export", "-c", &config, "--fold", "0", "--n", "5"]).unwrap();
    let err = with(&["review-unseal", "-c", &config]).unwrap_err();
    assert!(err.to_string().to_lowercase().contains("seal"), "{err}");

    let bundles = dir.path().join("run/review/bundles");
    let cases = fs::read_dir(&bundles)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(cases, 5);

    with(&["report", "-c", &config]).unwrap();
    let report = fs::read_to_string(dir.path().join("run/report.md")).unwrap();
    assert!(report.contains("clip_mtl_guideline"));
    let s = summary(dir.path());
    for cmd in ["prepare", "enrich", "train", "eval", "reason", "review-export", "report"] {
        assert!(s.commands.contains_key(cmd), "missing {cmd}");
    }
}

#[test]
fn tampered_predictions_fail_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), "80");
    let fast = ["--set", "model.train.epochs=2", "--set", "model.train.warmup_epochs=1"];
    let mut train = vec!["train", "-c", config.as_str(), "--fold", "1"];
    train.extend_from_slice(&fast);
    run(&train).unwrap();
    let preds = dir.path().join("run/train/clip_mtl_guideline/fold-1/predictions.csv");
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[2] = "0.123456".into();
    lines[1] = fields.join(",");
    fs::write(&preds, lines.join("\n") + "\n").unwrap();
    let mut eval = vec!["eval", "-c", config.as_str()];
    eval.extend_from_slice(&fast);
    let err = run(&eval).unwrap_err();
    assert!(matches!(err, CliError::Integrity(_)), "{err}");
}
