use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stressnet");

/// A schedule small enough for a test, still covering every stage.
const TINY: &str = r#"
profile = "smoke"

[synth]
subjects = 2
duration_samples = 4654
stress_segments = 2

[pretext]
epochs = 2

[finetune]
epochs = 3

[sweep]
test_count = 20
subset_draws = 2
repeats = 1
questions = ["nervous", "relaxed"]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort();
    acc
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (x, y) = (snapshot(a), snapshot(b));
    let names = |v: &[(PathBuf, Vec<u8>)]| v.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&x), names(&y));
    let differing: Vec<_> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.clone()).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}

#[test]
fn help_lists_every_flag() {
    let out = run(&["sweep", "--help"]);
    assert_eq!(code(&out), 0);
    let help = text(&out);
    for flag in ["--config", "--seed", "--out", "--workers", "--force", "--methods", "--profile", "--encoders", "--pretrain"] {
        assert!(help.contains(flag), "{flag} missing from help:\n{help}");
    }
    let top = text(&run(&["--help"]));
    for cmd in ["synth", "pretrain", "sweep", "validate", "convert-check"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&run(&["synth", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["sweep", "--methods", "both", "--out", "/tmp/x"])), 2);
}

#[test]
fn synth_is_deterministic_and_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&["synth", "--config", s(&cfg), "--seed", "7", "--out", s(dir)]);
        assert_eq!(code(&out), 0, "{}", text(&out));
    }
    assert_same_tree(&a, &b);
    assert!(a.join("S01").join("manifest.json").is_file());
    assert!(a.join("config.toml").is_file());

    let out = run(&["validate", s(&a)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let out = run(&["convert-check", s(&a)]);
    assert_eq!(code(&out), 0, "{}", text(&out));

    // A non-empty output directory is refused without --force.
    let again = run(&["synth", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    assert_eq!(code(&again), 1);
    assert!(text(&again).contains("--force"));
    let forced = run(&["synth", "--config", s(&cfg), "--seed", "7", "--out", s(&a), "--force"]);
    assert_eq!(code(&forced), 0);
    assert_same_tree(&a, &b);
}

#[test]
fn synth_with_zero_subjects_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("zero.toml");
    fs::write(&cfg, "profile = \"smoke\"\n[synth]\nsubjects = 0\n").unwrap();
    let out = run(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 1, "{}", text(&out));
}

#[test]
fn validate_reports_bad_likert_and_missing_paths() {
    assert_eq!(code(&run(&["validate", "/nonexistent/stressnet-data"])), 2);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["synth", "--config", s(&cfg), "--out", s(&data)])), 0);
    let manifest_path = data.join("S02").join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["label_events"][1][3] = serde_json::json!(7);
    fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

    let out = run(&["validate", s(&data)]);
    assert_eq!(code(&out), 1);
    let report = text(&out);
    assert!(report.contains("S02") && report.contains("event 1") && report.contains("likert 7"), "{report}");
    assert_eq!(code(&run(&["validate", s(&data.join("S01"))])), 0);
}

#[test]
fn missing_modality_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["synth", "--config", s(&cfg), "--out", s(&data)])), 0);
    fs::remove_file(data.join("S01").join("resp.f32")).unwrap();
    let out = run(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("enc"))]);
    assert_eq!(code(&out), 1);
    assert!(text(&out).contains("RESP"), "{}", text(&out));
}

#[test]
fn pretrain_writes_one_artifact_per_subject_and_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let enc = tmp.path().join("enc");
    let out = run(&["pretrain", "--config", s(&cfg), "--out", s(&enc)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let artifacts: Vec<_> = fs::read_dir(&enc)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "enc"))
        .collect();
    assert_eq!(artifacts.len(), 6 * 2);

    // The log's final running-best validation loss is the artifact's loss.
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(enc.join("pretrain_S01.json")).unwrap()).unwrap();
    let ecg = &log["modalities"][0];
    assert_eq!(ecg["modality"], "ECG");
    let last = ecg["epochs"].as_array().unwrap().last().unwrap().clone();
    let artifact = stressnet::pretext::EncoderArtifact::load(enc.join("S01_ecg.enc")).unwrap();
    assert_eq!(last["best_loss"].as_f64().unwrap(), artifact.meta.final_loss);

    let copy = tmp.path().join("copy");
    let again = run(&["pretrain", "--config", s(&cfg), "--out", s(&copy)]);
    assert_eq!(code(&again), 0);
    assert_same_tree(&enc, &copy);
    let forced = run(&["pretrain", "--config", s(&cfg), "--out", s(&enc), "--force"]);
    assert_eq!(code(&forced), 0);
    assert_same_tree(&enc, &copy);
}

#[test]
fn sweep_filters_methods_and_is_reproducible_from_its_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let enc = tmp.path().join("enc");
    assert_eq!(code(&run(&["pretrain", "--config", s(&cfg), "--out", s(&enc)])), 0);

    let first = tmp.path().join("first");
    let out = run(&["sweep", "--config", s(&cfg), "--encoders", s(&enc), "--methods", "ssl", "--out", s(&first)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let rows = stressnet::eval::read_results(first.join("results.csv")).unwrap();
    // 2 subjects x 2 questions x 2 draws x 1 repeat, ssl only.
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.method == stressnet::finetune::Method::Ssl));
    assert!(first.join("aggregate.csv").is_file());
    assert!(first.join("plots").join("S01_nervous.dat").is_file());
    assert!(!first.join(".partial").exists());

    let second = tmp.path().join("second");
    let echo = first.join("config.toml");
    let out = run(&["sweep", "--config", s(&echo), "--out", s(&second)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(
        fs::read(first.join("results.csv")).unwrap(),
        fs::read(second.join("results.csv")).unwrap()
    );
}

#[test]
fn sweep_with_pretrain_runs_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = run(&["sweep", "--config", s(&cfg), "--pretrain", "--workers", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let rows = stressnet::eval::read_results(out_dir.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(out_dir.join("encoders").join("S02_acc.enc").is_file());
}

#[test]
fn sweep_needs_encoders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = run(&["sweep", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", text(&out));
    let out = run(&["sweep", "--config", s(&cfg), "--encoders", "/nonexistent/enc", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", text(&out));
}

#[test]
fn failed_cells_leave_a_partial_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("diverge.toml");
    fs::write(&cfg, format!("{TINY}\n[finetune.optimizer]\nlearning_rate = 1e30\n")).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&["sweep", "--config", s(&cfg), "--pretrain", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    let marker = fs::read_to_string(out_dir.join(".partial")).unwrap();
    assert!(marker.contains("cells failed"), "{marker}");
}
