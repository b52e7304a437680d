//! End-to-end runs of the `rar` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rartrack::bench::{load_otb_sequence, read_rects};
use rartrack::cli::read_log;

fn rar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, kind: &str, length: &str) {
    let o = rar(&["synth", "--kind", kind, "--out", s(dir), "--length", length, "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_writes_a_loadable_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("translate");
    synth(&dir, "translate", "12");
    let spec = load_otb_sequence(&dir).unwrap();
    assert_eq!(spec.len(), 12);
    assert_eq!(spec.frames.len(), 12);
    assert!(dir.join("config.json").is_file());
}

#[test]
fn static_track_matches_ground_truth_and_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("still");
    synth(&seq, "static", "20");
    let run = |out: &Path| {
        let o = rar(&["--jobs", "2", "track", "--seq", s(&seq), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("still.txt")).unwrap()
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    assert_eq!(a, b);
    assert_eq!(
        fs::read(tmp.path().join("a/still_confidence.csv")).unwrap(),
        fs::read(tmp.path().join("b/still_confidence.csv")).unwrap()
    );
    let (rects, _) = read_rects(tmp.path().join("a/still.txt")).unwrap();
    let gt = load_otb_sequence(&seq).unwrap().groundtruth;
    for (r, g) in rects.iter().zip(&gt) {
        for (x, y) in [(r.x, g.x), (r.y, g.y), (r.w, g.w), (r.h, g.h)] {
            assert!((x - y).abs() <= 1.0);
        }
    }
    assert!(tmp.path().join("a/config.json").is_file());
}

#[test]
fn missing_groundtruth_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("broken");
    synth(&seq, "static", "4");
    fs::remove_file(seq.join("groundtruth_rect.txt")).unwrap();
    let o = rar(&["track", "--seq", s(&seq), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("broken") && err.contains("groundtruth_rect.txt"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "static", "4");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"tracker": {"padding": 2.0}}"#).unwrap();
    let o = rar(&["track", "--seq", s(&seq), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("padding"));
}

#[test]
fn eval_reports_perfect_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data.join("one"), "translate", "6");
    let results = tmp.path().join("results");
    fs::create_dir_all(&results).unwrap();
    fs::copy(data.join("one/groundtruth_rect.txt"), results.join("one.txt")).unwrap();
    let out = tmp.path().join("report");
    let o = rar(&["eval", "--dataset", s(&data), "--results", s(&results), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["dp20"], 1.0);
    assert_eq!(report["overall"]["auc"], 1.0);
    for f in ["precision.svg", "success.svg", "summary.csv", "config.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    // results missing for a sequence
    fs::remove_file(results.join("one.txt")).unwrap();
    let o = rar(&["eval", "--dataset", s(&data), "--results", s(&results), "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    // empty dataset directory
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = rar(&["eval", "--dataset", s(&empty), "--results", s(&results), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_repeats_and_catches_perturbation() {
    let a = rar(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    let b = rar(&["gradcheck", "--seed", "1"]);
    assert_eq!(a.stdout, b.stdout);
    let bad = rar(&["gradcheck", "--perturb", "0.01"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    assert_eq!(code(&rar(&["gradcheck", "--size", "6"])), 2);
}

#[test]
fn bad_usage_exits_two() {
    assert_eq!(code(&rar(&["track"])), 2);
    assert_eq!(code(&rar(&["frobnicate"])), 2);
    assert_eq!(code(&rar(&["synth", "--kind", "spiral", "--out", "x"])), 2);
}

#[test]
fn train_writes_log_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"seed": 5, "train": {"pool": 4, "batch": 4, "checkpoint_every": 2,
            "sgd": {"steps": 4}, "pairs": {"patch_size": 64}}}"#,
    )
    .unwrap();
    let full = tmp.path().join("full");
    let o = rar(&["train", "--config", s(&cfg), "--out", s(&full)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_log(&full.join("log.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(full.join("step_000002.raft").is_file());
    assert!(full.join("final.raft").is_file());
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(full.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["seed"], 5);

    let o = rar(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&full),
        "--resume",
        s(&full.join("step_000002.raft")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = read_log(&full.join("log.csv")).unwrap();
    assert_eq!(resumed.len(), 4);
    for (a, b) in log.iter().zip(&resumed) {
        assert_eq!(a.step, b.step);
        assert!((a.loss - b.loss).abs() <= 1e-6 * a.loss.abs());
    }
}
