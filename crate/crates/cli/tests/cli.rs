use std::path::Path;
use std::process::{Command, Output};

fn relevance(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relevance"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn error_record(out: &Output) -> serde_json::Value {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error record on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

#[test]
fn init_config_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = relevance(&["init-config", "config.toml"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(text.contains("strictness = 0.8"));
    assert!(text.contains("[annotator.decoder]"));
}

#[test]
fn missing_config_is_a_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let rec = error_record(&relevance(&["gen-corpus", "--config", "nope.toml"], dir.path()));
    assert_eq!(rec["error"], "missing_artifact");
    assert_eq!(rec["stage"], "gen-corpus");
    assert!(rec["message"].as_str().unwrap().contains("nope.toml"));
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(relevance(&["init-config", "c.toml"], dir.path()).status.success());
    let rec = error_record(&relevance(
        &["gen-corpus", "--config", "c.toml", "--set", "annotator.strictnes=0.5"],
        dir.path(),
    ));
    assert_eq!(rec["error"], "config");
    let rec = error_record(&relevance(
        &["gen-corpus", "--config", "c.toml", "--set", "annotator.strictness=1.5"],
        dir.path(),
    ));
    assert_eq!(rec["error"], "config");
}

#[test]
fn mine_hard_without_student_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(relevance(&["init-config", "c.toml"], dir.path()).status.success());
    let small = [
        "--config",
        "c.toml",
        "--seed",
        "5",
        "--set",
        "corpus.splits.train=50",
        "--set",
        "corpus.splits.valid=20",
        "--set",
        "corpus.splits.test=20",
        "--set",
        "corpus.exposures=30",
        "--set",
        "corpus.heldout_exposures=30",
    ];
    let mut args = vec!["gen-corpus"];
    args.extend(small);
    let out = relevance(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/seed-5/train.jsonl").exists());

    let mut args = vec!["mine-hard"];
    args.extend(small);
    let rec = error_record(&relevance(&args, dir.path()));
    assert_eq!(rec["error"], "missing_artifact");
    assert_eq!(rec["stage"], "mine-hard");
    assert!(rec["message"].as_str().unwrap().contains("student_base"));
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_default_config_matches_init_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(relevance(&["init-config", "fresh.toml"], dir.path()).status.success());
    let fresh = std::fs::read_to_string(dir.path().join("fresh.toml")).unwrap();
    let shipped = std::fs::read_to_string(configs().join("default.toml")).unwrap();
    assert_eq!(fresh, shipped, "configs/default.toml is stale; regenerate it with init-config");
}

#[test]
fn smoke_run_all_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    let out = relevance(
        &["--config", cfg.to_str().unwrap(), "--out", "runs", "--seed", "1", "run-all"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = std::fs::read_to_string(dir.path().join("runs/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("runs/report.txt").exists());
    assert!(dir.path().join("runs/seed-1/annotator_kto.json").exists());
}
