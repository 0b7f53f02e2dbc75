//! End-to-end tests of the `kgdialog` binary: synthetic data generation,
//! training, the staged and one-shot pipelines (which must agree byte for
//! byte), evaluation, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgdialog"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Shared fixture: synthetic corpus plus trained models, built once.
struct Fixture {
    dir: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("kgdialog-cli-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let d = dir.to_str().unwrap().to_string();
        run_ok(&[
            "synth-data",
            "--out",
            &d,
            "--seed",
            "5",
            "--dialogs",
            "160",
        ]);
        let kb = format!("{d}/knowledge.json");
        let logs = format!("{d}/train.logs.json");
        let labels = format!("{d}/train.labels.json");
        let models = format!("{d}/models");
        run_ok(&[
            "train-detector",
            "--kb", &kb, "--logs", &logs, "--labels", &labels, "--models", &models,
            "--epochs", "6",
            "--augment-logs", &logs,
            "--augment-entities", &format!("{d}/train.source_entities.json"),
        ]);
        run_ok(&[
            "train-selector",
            "--kb", &kb, "--logs", &logs, "--labels", &labels, "--models", &models,
            "--epochs", "6",
        ]);
        for which in ["dm", "lm", "ilm"] {
            run_ok(&[
                "train-generator",
                "--kb", &kb, "--logs", &logs, "--labels", &labels, "--models", &models,
                "--which", which, "--style", "spoken",
            ]);
        }
        run_ok(&[
            "train-channel",
            "--kb", &kb, "--logs", &logs, "--labels", &labels, "--models", &models,
        ]);
        Fixture { dir }
    })
}

fn path(fixture: &Fixture, name: &str) -> String {
    fixture.dir.join(name).to_str().unwrap().to_string()
}

fn common_args(f: &Fixture, out: &str) -> Vec<String> {
    vec![
        "--kb".into(),
        path(f, "knowledge.json"),
        "--logs".into(),
        path(f, "val.logs.json"),
        "--models".into(),
        path(f, "models"),
        "--out".into(),
        out.to_string(),
        "--fusion".into(),
        "nc-online".into(),
        "--lambda1".into(),
        "0.2".into(),
        "--lambda2".into(),
        "1.0".into(),
        "--style".into(),
        "spoken".into(),
        "--strategy".into(),
        "max".into(),
    ]
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let f = fixture();
    let out_a = path(f, "pipe_a.json");
    let out_b = path(f, "pipe_b.json");
    let out_c = path(f, "pipe_c.json");
    for (out, workers) in [(&out_a, "2"), (&out_b, "2"), (&out_c, "1")] {
        let mut args: Vec<String> = vec!["pipeline".into()];
        args.extend(common_args(f, out));
        args.extend([
            "--labels".into(),
            path(f, "val.labels.json"),
            "--workers".into(),
            workers.into(),
            "--seed".into(),
            "3".into(),
        ]);
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let output = run_ok(&arg_refs);
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("detection"), "report missing: {stdout}");
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    let c = std::fs::read(&out_c).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "pipeline runs with identical config and seed differ");
    assert_eq!(a, c, "worker count changed the output");
}

#[test]
fn staged_run_equals_pipeline_run() {
    let f = fixture();
    let pipe_out = path(f, "oneshot.json");
    let mut args: Vec<String> = vec!["pipeline".into()];
    args.extend(common_args(f, &pipe_out));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);

    let detect_out = path(f, "stage_detect.json");
    let mut args: Vec<String> = vec!["detect".into()];
    args.extend(common_args(f, &detect_out));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);

    let select_out = path(f, "stage_select.json");
    let mut args: Vec<String> = vec![
        "select".into(),
        "--detections".into(),
        detect_out.clone(),
    ];
    args.extend(common_args(f, &select_out));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);

    let generate_out = path(f, "stage_generate.json");
    let mut args: Vec<String> = vec![
        "generate".into(),
        "--selections".into(),
        select_out.clone(),
    ];
    args.extend(common_args(f, &generate_out));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);

    let staged = std::fs::read(&generate_out).unwrap();
    let oneshot = std::fs::read(&pipe_out).unwrap();
    assert_eq!(staged, oneshot, "staged composition differs from the one-shot pipeline");
}

#[test]
fn evaluate_perfect_predictions() {
    let f = fixture();
    let labels = path(f, "val.labels.json");
    let output = run_ok(&["evaluate", "--predictions", &labels, "--references", &labels]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("f1 1.0000"), "{stdout}");
    assert!(stdout.contains("R@1 1.0000"), "{stdout}");
    assert!(stdout.contains("BLEU-1 1.0000"), "{stdout}");
}

#[test]
fn detect_tune_reports_threshold() {
    let f = fixture();
    let out = path(f, "detect_tuned.json");
    let mut args: Vec<String> = vec!["detect".into(), "--tune".into()];
    args.extend(common_args(f, &out));
    args.extend(["--labels".into(), path(f, "val.labels.json")]);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let output = run_ok(&arg_refs);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("tuned threshold"), "{stdout}");
}

#[test]
fn unreachable_threshold_marks_everything_negative() {
    let f = fixture();
    let out = path(f, "all_negative.json");
    let mut args: Vec<String> = vec!["pipeline".into()];
    args.extend(common_args(f, &out));
    // A threshold above every score: classifier outputs stay below 1.
    args.extend(["--threshold".into(), "1.0".into()]);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);
    let labels: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for entry in labels.as_array().unwrap() {
        assert_eq!(entry, &serde_json::json!({"target": false}));
    }
}

#[test]
fn config_file_with_set_overrides() {
    let f = fixture();
    let out = path(f, "from_config.json");
    let config = serde_json::json!({
        "paths": {
            "knowledge": path(f, "knowledge.json"),
            "logs": path(f, "val.logs.json"),
            "models": path(f, "models"),
            "output": out,
        },
        "fusion": {"mode": "direct"},
        "style": "spoken",
    });
    let config_path = path(f, "config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok(&[
        "pipeline",
        "--config",
        &config_path,
        "--set",
        "detector.threshold=0.4",
        "--set",
        "selection.gamma=0.5",
    ]);
    assert!(Path::new(&out).exists());
}

#[test]
fn grid_sweeps_selection() {
    let f = fixture();
    let grid_out = path(f, "grid.json");
    let mut args: Vec<String> = vec![
        "grid".into(),
        "--stage".into(),
        "selection".into(),
        "--t-values".into(),
        "0.0,1.0".into(),
        "--gamma-values".into(),
        "0.0,1.0".into(),
        "--grid-out".into(),
        grid_out.clone(),
    ];
    args.extend(common_args(f, &path(f, "grid_scratch.json")));
    args.extend(["--labels".into(), path(f, "val.labels.json")]);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&arg_refs);
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&grid_out).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    for row in rows.as_array().unwrap() {
        assert!(row["metrics"]["r_at_1"].is_number());
    }
}

#[test]
fn normalize_text_subcommand() {
    let output = run_ok(&["normalize", "--text", "The 42 mm Wi-Fi test!"]);
    assert_eq!(
        String::from_utf8_lossy(&output.stdout).trim(),
        "the forty two millimeters wi-fi test"
    );
}

#[test]
fn augment_produces_aligned_files() {
    let f = fixture();
    let out_logs = path(f, "aug.logs.json");
    let out_labels = path(f, "aug.labels.json");
    run_ok(&[
        "augment",
        "--kb",
        &path(f, "knowledge.json"),
        "--source-logs",
        &path(f, "train.logs.json"),
        "--source-entities",
        &path(f, "train.source_entities.json"),
        "--out-logs",
        &out_logs,
        "--out-labels",
        &out_labels,
    ]);
    let logs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_logs).unwrap()).unwrap();
    let labels: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_labels).unwrap()).unwrap();
    // One sample per knowledge-base document (3 domains x 4 entities x 5 docs).
    assert_eq!(logs.as_array().unwrap().len(), 60);
    assert_eq!(labels.as_array().unwrap().len(), 60);
    assert!(labels.as_array().unwrap().iter().all(|l| l["target"] == true));
}

#[test]
fn exit_codes_by_error_category() {
    let f = fixture();
    // Config error: missing required path flags.
    let status = bin()
        .args(["pipeline", "--logs", "nowhere.json"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2), "config error exits 2");

    // Config error: invalid flag value.
    let mut args: Vec<String> = vec!["pipeline".into()];
    args.extend(common_args(f, &path(f, "scratch.json")));
    args.extend(["--strategy".into(), "bogus".into()]);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let status = bin().args(&arg_refs).output().unwrap();
    assert_eq!(status.status.code(), Some(2), "bad strategy exits 2");

    // Data error: malformed knowledge base.
    let bad_kb = path(f, "bad_kb.json");
    std::fs::write(&bad_kb, "{ not json").unwrap();
    let mut args: Vec<String> = vec!["pipeline".into()];
    args.extend(common_args(f, &path(f, "scratch.json")));
    args[2] = bad_kb; // --kb value
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let status = bin().args(&arg_refs).output().unwrap();
    assert_eq!(status.status.code(), Some(3), "parse error exits 3");

    // Model error: missing models directory.
    let mut args: Vec<String> = vec!["pipeline".into()];
    args.extend(common_args(f, &path(f, "scratch.json")));
    args[6] = path(f, "no_such_models"); // --models value
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let status = bin().args(&arg_refs).output().unwrap();
    assert_eq!(status.status.code(), Some(4), "missing model exits 4");
}
