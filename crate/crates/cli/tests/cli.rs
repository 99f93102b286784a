//! End-to-end command tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn detkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let run = detkit(
            &[
                "gen", "--out", out, "--images", "3", "--seed", "9", "--image-size", "96",
            ],
            dir.path(),
        );
        assert!(run.status.success());
    }
    let a = fs::read(dir.path().join("a/annotations.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/annotations.jsonl")).unwrap();
    assert_eq!(a, b);
    let img_a = fs::read(dir.path().join("a/images/scene_0000.ppm")).unwrap();
    let img_b = fs::read(dir.path().join("b/images/scene_0000.ppm")).unwrap();
    assert_eq!(img_a, img_b);

    let run = detkit(
        &[
            "gen", "--out", "c", "--images", "3", "--seed", "10", "--image-size", "96",
        ],
        dir.path(),
    );
    assert!(run.status.success());
    let c = fs::read(dir.path().join("c/annotations.jsonl")).unwrap();
    assert_ne!(a, c);

    assert!(dir.path().join("a/run-manifest.json").exists());
    assert!(dir.path().join("a/stats.json").exists());
}

#[test]
fn eval_scores_a_perfect_detector() {
    let dir = tempfile::tempdir().unwrap();
    let gt = r#"{"image_id":0,"class_id":1,"cx":20.0,"cy":20.0,"w":10.0,"h":10.0}
{"image_id":0,"class_id":2,"cx":60.0,"cy":60.0,"w":12.0,"h":8.0}
"#;
    let pred = r#"{"image_id":0,"class_id":1,"cx":20.0,"cy":20.0,"w":10.0,"h":10.0,"score":0.9}
{"image_id":0,"class_id":2,"cx":60.0,"cy":60.0,"w":12.0,"h":8.0,"score":0.8}
"#;
    fs::write(dir.path().join("gt.jsonl"), gt).unwrap();
    fs::write(dir.path().join("pred.jsonl"), pred).unwrap();

    let run = detkit(
        &[
            "eval", "--gt", "gt.jsonl", "--pred", "pred.jsonl", "--out", "report",
        ],
        dir.path(),
    );
    let report = stdout_json(&run);
    assert_eq!(report["map50"], 1.0);
    assert_eq!(report["map50_95"], 1.0);
    assert!(dir.path().join("report/eval-report.json").exists());
    assert!(dir.path().join("report/run-manifest.json").exists());

    // Table mode renders.
    let table = detkit(
        &[
            "eval", "--gt", "gt.jsonl", "--pred", "pred.jsonl", "--format", "table",
        ],
        dir.path(),
    );
    assert!(table.status.success());
    assert!(String::from_utf8_lossy(&table.stdout).contains("mAP50"));

    // Custom threshold list is honored.
    let custom = detkit(
        &[
            "eval", "--gt", "gt.jsonl", "--pred", "pred.jsonl", "--iou-thr", "0.7",
        ],
        dir.path(),
    );
    let report = stdout_json(&custom);
    assert_eq!(report["map_per_threshold"][0][0], 0.7);
    assert!(report["map50"].is_null());
}

#[test]
fn eval_rejects_malformed_inputs_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gt.jsonl"), "garbage\n").unwrap();
    fs::write(dir.path().join("pred.jsonl"), "").unwrap();
    let run = detkit(
        &["eval", "--gt", "gt.jsonl", "--pred", "pred.jsonl"],
        dir.path(),
    );
    assert_eq!(run.status.code(), Some(2));

    let missing = detkit(&["eval", "--gt", "nope.jsonl"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn fuse_check_passes_and_corruption_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = detkit(
        &["fuse-check", "--trials", "25", "--seed", "5", "--out", "fc"],
        dir.path(),
    );
    let report = stdout_json(&ok);
    assert_eq!(report["passed"], true);
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-9);
    assert!(dir.path().join("fc/fuse-check.json").exists());

    let bad = detkit(
        &["fuse-check", "--trials", "5", "--inject-corruption"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));

    let minimal = detkit(
        &["fuse-check", "--trials", "5", "--width", "1", "--spatial", "4"],
        dir.path(),
    );
    assert!(minimal.status.success());
}

#[test]
fn bench_reports_exact_mac_ratio_and_fused_speed() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(
        &["bench", "--shapes", "1x8x16x16:8", "--reps", "21"],
        dir.path(),
    );
    let report = stdout_json(&run);
    let shape = &report["shapes"][0];
    assert_eq!(shape["macs"]["vanilla"], 147456);
    assert_eq!(shape["macs"]["fused"], 147456);
    assert_eq!(shape["macs"]["train_composite"], 4 * 147456);
    assert_eq!(shape["mac_ratio_train_over_fused"], 4.0);
    assert_eq!(shape["fused_not_slower"], true);
    assert_eq!(report["spd_flops"]["macs_per_output_vs_stride1"], 4.0);
}

#[test]
fn regress_emits_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(
        &[
            "regress", "--pairs", "10", "--steps", "150", "--seed", "3", "--out", "reg",
        ],
        dir.path(),
    );
    let summary = stdout_json(&run);
    assert_eq!(summary["pairs"], 10);
    assert!(summary["final_mean_iou"].as_f64().unwrap() > 0.0);

    let csv = fs::read_to_string(dir.path().join("reg/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,mean_loss,mean_iou,ema_mean,mean_gamma"
    );
    assert_eq!(csv.lines().count(), 151);
    assert!(dir.path().join("reg/summary.json").exists());
    assert!(dir.path().join("reg/run-manifest.json").exists());
}

#[test]
fn gamma_curve_hits_the_fixed_points() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(
        &["gamma-curve", "--samples", "11", "--beta-max", "6"],
        dir.path(),
    );
    assert!(run.status.success());
    let text = String::from_utf8_lossy(&run.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "beta,gamma");
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (b, g) = l.split_once(',').unwrap();
            (b.parse().unwrap(), g.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0], (0.0, 0.0));
    let at_delta = rows.iter().find(|(b, _)| (*b - 3.0).abs() < 1e-9).unwrap();
    assert!((at_delta.1 - 1.0).abs() <= 1e-12);
}

#[test]
fn featmap_writes_pgm_taps() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(
        &[
            "featmap", "--seed", "2", "--channels", "8", "--size", "24", "--k", "7", "--out", "fm",
        ],
        dir.path(),
    );
    assert!(run.status.success());
    for tap in ["input", "branch", "premerge", "output"] {
        let bytes = fs::read(dir.path().join(format!("fm/{tap}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n"), "{tap} is not a PGM");
    }
}

#[test]
fn pipeline_zero_jitter_is_perfect_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(
        &[
            "pipeline",
            "--images",
            "2",
            "--seed",
            "7",
            "--image-size",
            "160",
            "--stack-input",
            "32",
            "--out",
            "pipe",
        ],
        dir.path(),
    );
    let report = stdout_json(&run);
    assert_eq!(report["map50"], 1.0);
    assert!(dir.path().join("pipe/scene_0000.ppm").exists());
    assert!(dir.path().join("pipe/featmap_0000_output.pgm").exists());
    assert!(dir.path().join("pipe/eval-report.json").exists());

    // Jitter beyond any overlap collapses the score to zero.
    let wild = detkit(
        &[
            "pipeline",
            "--images",
            "1",
            "--seed",
            "7",
            "--image-size",
            "160",
            "--stack-input",
            "32",
            "--jitter",
            "5000",
            "--score-noise",
            "0.5",
        ],
        dir.path(),
    );
    let report = stdout_json(&wild);
    assert_eq!(report["map50"], 0.0);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "seed = 123\nsamples = 5\n").unwrap();

    // Config supplies both values.
    let from_cfg = detkit(
        &["--config", "run.cfg", "gamma-curve", "--beta-max", "4"],
        dir.path(),
    );
    assert!(from_cfg.status.success());
    let text = String::from_utf8_lossy(&from_cfg.stdout);
    assert_eq!(text.lines().count(), 6); // header + 5 samples

    // Explicit flag beats the config.
    let flag_wins = detkit(
        &[
            "--config",
            "run.cfg",
            "gamma-curve",
            "--beta-max",
            "4",
            "--samples",
            "3",
        ],
        dir.path(),
    );
    let text = String::from_utf8_lossy(&flag_wins.stdout);
    assert_eq!(text.lines().count(), 4);

    // Malformed config is a usage error.
    fs::write(dir.path().join("bad.cfg"), "no equals sign\n").unwrap();
    let bad = detkit(
        &["--config", "bad.cfg", "gamma-curve"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_report_matches_the_golden_file() {
    // Canonicalized comparison: both sides parsed to JSON values, so key
    // order and whitespace are irrelevant but every number must match.
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let run = detkit(
        &[
            "eval",
            "--gt",
            data.join("gt.jsonl").to_str().unwrap(),
            "--pred",
            data.join("pred.jsonl").to_str().unwrap(),
        ],
        data.as_path(),
    );
    let report = stdout_json(&run);
    let golden: serde_json::Value =
        serde_json::from_slice(&fs::read(data.join("eval-report.golden.json")).unwrap()).unwrap();
    assert_eq!(report, golden);
    assert_eq!(report["zero_gt_classes"], serde_json::json!([9]));
}

#[test]
fn unknown_flags_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = detkit(&["gen", "--bogus"], dir.path());
    assert_eq!(run.status.code(), Some(2));
}
