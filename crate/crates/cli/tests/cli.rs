//! The `dforge` binary driven end to end: every subcommand, exit codes and
//! the pipeline's handling of incomplete input.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dforge_core::datamodel::{write_pool, Pattern, PatternPool};
use dforge_core::synth::MANIFEST_FILE;
use serde_json::Value;

fn dforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dforge"))
        .args(args)
        .env_remove("DFORGE_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = dforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Four classes, the first two with distractors.
fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth", "--classes", "4", "--distractor-frac", "0.5", "--images-per-class", "6",
        "--grid", "10x10", "--feat-dim", "16", "--noise", "0.05", "--seed", "3", "--out", &s(&data),
    ]);
    data.join(MANIFEST_FILE)
}

#[test]
fn usage_errors_exit_1_with_help() {
    let out = dforge(&[]);
    assert_eq!(code(&out), 1);

    let out = dforge(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");

    let out = dforge(&["cluster", "--pool"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--max-k"), "subcommand help expected: {err}");

    assert_eq!(code(&dforge(&["--help"])), 0);
    assert_eq!(code(&dforge(&["pipeline", "--help"])), 0);
}

#[test]
fn invalid_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dforge(&[
        "synth", "--classes", "4", "--distractor-frac", "1.5", "--images-per-class", "2",
        "--grid", "8x8", "--feat-dim", "16", "--noise", "0.05", "--out", &s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&out), 1);

    let manifest = synth(dir.path());
    let run = |extra: &[&str]| {
        let mut args = vec![
            "pipeline".to_string(), "--manifest".into(), s(&manifest), "--annotations".into(),
            s(&dir.path().join("ann")), "--out".into(), s(&dir.path().join("run")),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        code(&dforge(&refs))
    };
    assert_eq!(run(&["--jobs", "0"]), 1);
    assert_eq!(run(&["--min-k", "5", "--max-k", "4"]), 1);
    assert_eq!(run(&["--theta", "1.5"]), 1);

    let out = Command::new(env!("CARGO_BIN_EXE_dforge"))
        .args(["synth", "--classes", "2", "--distractor-frac", "0.5", "--images-per-class", "2",
            "--grid", "8x8", "--feat-dim", "8", "--noise", "0.0", "--out"])
        .arg(dir.path().join("y"))
        .env("DFORGE_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dforge(&[
        "pipeline", "--manifest", &s(&dir.path().join("missing.json")), "--annotations",
        &s(&dir.path().join("ann")), "--out", &s(&dir.path().join("run")),
    ]);
    assert_eq!(code(&out), 2);

    // three patterns cannot form two clusters of the default bounds
    let patterns = (0..3)
        .map(|i| Pattern {
            vec: vec![1.0, 0.0],
            image_id: format!("i{i}"),
            region: (0, 0),
        })
        .collect();
    let pool = PatternPool::new("c09", 2, patterns, "test").unwrap();
    let path = dir.path().join("pool_c09.bin");
    write_pool(&pool, &path).unwrap();
    let out = dforge(&["cluster", "--pool", &s(&path), "--out", &s(&dir.path().join("m.clus"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let manifest = synth(dir.path());
    let out = dforge(&[
        "bbox", "--manifest", &s(&manifest), "--class", "c99", "--out", &s(&dir.path().join("b.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = synth(d);
    let man = s(&manifest);
    let pool = d.join("pool_c00.bin");
    let model = d.join("models").join("model_c00.clus");
    ok(&["pool", "--manifest", &man, "--class", "c00", "--out", &s(&pool)]);
    // the class comes from the pool's file name
    ok(&["cluster", "--pool", &s(&pool), "--seed", "1", "--out", &s(&model)]);

    let heat = d.join("heat");
    ok(&["heatmap", "--manifest", &man, "--class", "c00", "--model", &s(&model), "--image", "c00_000", "--out", &s(&heat)]);
    let maps: Vec<_> = std::fs::read_dir(&heat).unwrap().collect();
    assert_eq!(maps.len(), 2);
    assert!(heat.join("hm_c00_c00_000_c0.smap").exists());

    let ann = d.join("ann");
    ok(&["oracle", "--manifest", &man, "--models", &s(&d.join("models")), "--out", &s(&ann)]);
    let record = json(&ann.join("ann_c00.json"));
    assert_eq!(record["class"], "c00");
    assert_eq!(record["labels"].as_object().unwrap().len(), 2);

    let refined = d.join("refined");
    ok(&["apply", "--manifest", &man, "--class", "c00", "--model", &s(&model), "--annotation", &s(&ann.join("ann_c00.json")), "--out", &s(&refined)]);
    assert_eq!(std::fs::read_dir(&refined).unwrap().count(), 6);

    let base_boxes = d.join("base.json");
    let ref_boxes = d.join("ref.json");
    ok(&["bbox", "--manifest", &man, "--class", "c00", "--out", &s(&base_boxes)]);
    ok(&["bbox", "--manifest", &man, "--class", "c00", "--scores", &s(&refined), "--out", &s(&ref_boxes)]);
    assert_eq!(json(&ref_boxes).as_object().unwrap().len(), 6);

    let out = dforge(&["eval", "--manifest", &man, "--boxes", &s(&ref_boxes), "--out", &s(&d.join("r.json"))]);
    assert_eq!(code(&out), 1, "a flat box file needs --class");
    ok(&["eval", "--manifest", &man, "--boxes", &s(&base_boxes), "--class", "c00", "--out", &s(&d.join("base_report.json"))]);
    ok(&["eval", "--manifest", &man, "--boxes", &s(&ref_boxes), "--class", "c00", "--out", &s(&d.join("ref_report.json"))]);
    let base = json(&d.join("base_report.json"));
    let refined_report = json(&d.join("ref_report.json"));
    assert_eq!(base["classes"]["c00"]["images"], 6);
    assert!(
        refined_report["classes"]["c00"]["accuracy"].as_f64().unwrap()
            > base["classes"]["c00"]["accuracy"].as_f64().unwrap()
    );

    let improvements = d.join("improvements.json");
    std::fs::write(&improvements, r#"{"c00": 0.5}"#).unwrap();
    let curve = d.join("curve.csv");
    ok(&["prioritize", "--models", &s(&d.join("models")), "--improvements", &s(&improvements), "--out", &s(&curve)]);
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
}

#[test]
fn pipeline_flags_unannotated_classes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let man = s(&synth(d));
    let ann = d.join("ann");
    let first = d.join("first");
    ok(&["pipeline", "--manifest", &man, "--annotations", &s(&ann), "--out", &s(&first)]);
    let summary = json(&first.join("summary.json"));
    assert_eq!(summary["unannotated"].as_array().unwrap().len(), 4);
    assert!(summary["refined"].as_array().unwrap().is_empty());
    // without annotations nothing changes
    assert_eq!(
        std::fs::read(first.join("boxes_baseline.json")).unwrap(),
        std::fs::read(first.join("boxes_refined.json")).unwrap()
    );

    // annotate one class only
    ok(&["oracle", "--manifest", &man, "--models", &s(&first.join("models")), "--class", "c00", "--out", &s(&ann)]);
    let second = d.join("second");
    ok(&["pipeline", "--manifest", &man, "--annotations", &s(&ann), "--out", &s(&second)]);
    for f in [
        "boxes_baseline.json", "boxes_refined.json", "report_baseline.json",
        "report_refined.json", "improvements.json", "curve.csv", "summary.json",
    ] {
        assert!(second.join(f).exists(), "{f}");
    }
    let summary = json(&second.join("summary.json"));
    assert_eq!(summary["refined"], serde_json::json!(["c00"]));
    assert_eq!(summary["unannotated"], serde_json::json!(["c01", "c02", "c03"]));
    let improvements = json(&second.join("improvements.json"));
    assert!(improvements["c00"].as_f64().unwrap() > 0.5);
    assert_eq!(improvements["c01"].as_f64().unwrap(), 0.0);
    assert_eq!(std::fs::read_dir(second.join("refined").join("c00")).unwrap().count(), 6);
    assert!(!second.join("refined").join("c01").exists());

    // the nested box file evaluates directly, filtered or not
    let boxes = s(&second.join("boxes_refined.json"));
    ok(&["eval", "--manifest", &man, "--boxes", &boxes, "--out", &s(&d.join("all.json"))]);
    ok(&["eval", "--manifest", &man, "--boxes", &boxes, "--class", "c00", "--out", &s(&d.join("one.json"))]);
    assert_eq!(json(&d.join("all.json")), json(&second.join("report_refined.json")));
    assert_eq!(
        json(&d.join("one.json"))["classes"].as_object().unwrap().len(),
        1
    );
}

#[test]
fn incomplete_annotation_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let man = s(&synth(d));
    let ann = d.join("ann");
    std::fs::create_dir_all(&ann).unwrap();
    std::fs::write(
        ann.join("ann_c00.json"),
        r#"{"class": "c00", "labels": {"0": "object"}, "annotator": "x", "timestamp": "2024-01-01T00:00:00Z"}"#,
    )
    .unwrap();
    let out = dforge(&["pipeline", "--manifest", &man, "--annotations", &s(&ann), "--out", &s(&d.join("run"))]);
    assert_eq!(code(&out), 2);
}
