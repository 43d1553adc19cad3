use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fundus-reg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", path(dir), "--count", count, "--size", "240", "--target-size", "360"];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_then_evaluate_reports_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3", &[]);
    let manifest = dir.path().join("manifest.json");
    assert!(manifest.exists());
    for f in ["source.png", "target.png", "gt_transform.json", "correspondences.json", "gt.json", "rois.json", "config.json"] {
        assert!(dir.path().join("seed0000").join(f).exists(), "{f}");
    }

    let report = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    let overlays = dir.path().join("overlays");
    let out = run(&[
        "evaluate",
        "--manifest",
        path(&manifest),
        "--out",
        path(&report),
        "--csv",
        path(&csv),
        "--overlay-dir",
        path(&overlays),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["report"]["n_pairs"], 3);
    assert_eq!(json["pairs"].as_array().unwrap().len(), 3);
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.starts_with("n_pairs,"));
    assert!(overlays.join("seed0000.png").exists());
}

#[test]
fn evaluate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", &["--outlier-fraction", "0.2"]);
    let manifest = dir.path().join("manifest.json");
    let a = run(&["evaluate", "--manifest", path(&manifest)]);
    let b = run(&["evaluate", "--manifest", path(&manifest)]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn register_writes_transform_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let p = dir.path().join("seed0000");
    let t = dir.path().join("t.json");
    let o = dir.path().join("o.png");
    let m = dir.path().join("m.json");
    let out = run(&[
        "register",
        "--source",
        path(&p.join("source.png")),
        "--target",
        path(&p.join("target.png")),
        "--rois",
        path(&p.join("rois.json")),
        "--out",
        path(&t),
        "--overlay",
        path(&o),
        "--matches-out",
        path(&m),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "registered");
    let transform: serde_json::Value = serde_json::from_str(&fs::read_to_string(&t).unwrap()).unwrap();
    assert_eq!(transform["type"], "polynomial");
    assert!(o.exists() && m.exists());

    // the overlay subcommand reproduces the same image from the saved transform
    let o2 = dir.path().join("o2.png");
    let out = run(&[
        "overlay",
        "--source",
        path(&p.join("source.png")),
        "--target",
        path(&p.join("target.png")),
        "--transform",
        path(&t),
        "--out",
        path(&o2),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(&o).unwrap(), fs::read(&o2).unwrap());
}

#[test]
fn register_without_rois_needs_crop_disabled() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let p = dir.path().join("seed0000");
    let t = dir.path().join("t.json");
    let (src, tgt) = (p.join("source.png"), p.join("target.png"));
    let base = ["register", "--source", path(&src), "--target", path(&tgt), "--out", path(&t)];
    assert!(!run(&base).status.success());
    let mut args = base.to_vec();
    args.extend_from_slice(&["--crop", "false", "--strategy", "ransac-only"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_pairs_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let blank = dir.path().join("blank.pgm");
    write_blank_pgm(&blank);
    let manifest = dir.path().join("m.json");
    let entry = serde_json::json!([{
        "id": "blank",
        "source": "blank.pgm",
        "target": "seed0000/target.png",
        "rois": "seed0000/rois.json",
        "gt": "seed0000/gt.json"
    }]);
    fs::write(&manifest, entry.to_string()).unwrap();
    let out = run(&["evaluate", "--manifest", path(&manifest)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["report"]["failed_rate"], 1.0);
    assert_eq!(json["pairs"][0]["classification"], "failed");
}

fn write_blank_pgm(p: &Path) {
    // 8-bit PGM of zeros
    let mut bytes = b"P5\n64 64\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(0u8, 64 * 64));
    fs::write(p, bytes).unwrap();
}

#[test]
fn config_and_io_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert!(!run(&["evaluate", "--manifest", path(&missing)]).status.success());

    let empty = dir.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let out = run(&["evaluate", "--manifest", path(&empty)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no pairs"));

    let bad_cfg = dir.path().join("cfg.json");
    fs::write(&bad_cfg, r#"{"poly_degree": 0}"#).unwrap();
    synth(dir.path(), "1", &[]);
    let manifest = dir.path().join("manifest.json");
    assert!(!run(&["evaluate", "--manifest", path(&manifest), "--config", path(&bad_cfg)]).status.success());
    assert!(!run(&["sweep", "--manifest", path(&manifest), "--degrees", ""]).status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let manifest = dir.path().join("manifest.json");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"poly_degree": 0}"#).unwrap();
    // the invalid degree from the file is replaced by the flag
    let out = run(&["evaluate", "--manifest", path(&manifest), "--config", path(&cfg), "--degree", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_prints_one_row_per_degree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", &[]);
    let manifest = dir.path().join("manifest.json");
    let out = run(&["sweep", "--manifest", path(&manifest), "--degrees", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("degree,"));
    assert!(lines[1].starts_with("2,2,"));
}
