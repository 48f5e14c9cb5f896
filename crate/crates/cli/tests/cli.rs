use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mid_core::harness::synthetic::{MarkerDataset, MarkerGeometry};
use serde_json::Value;

const SMALL: MarkerGeometry = MarkerGeometry {
    height: 64,
    width: 85,
    marker: 8,
    crop: 56,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn dataset(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    MarkerDataset::new(SMALL, n, 1).unwrap().write_to_dir(&dir.path().join("data")).unwrap();
    dir
}

fn mid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mid"))
        .args(args)
        .env_remove("MID_PRESETS")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn reference_args<'a>(root: &'a Path, out: &'a str, strategy: &'a str) -> Vec<&'a str> {
    vec![
        "eval", "--reference-backend", "7", "--data-dir", path(root), "--resize", "64", "--crop", "56",
        "--strategy", strategy, "--seed", "3", "--out", out,
    ]
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reference_backend_run_writes_report() {
    let tmp = dataset(12);
    let out = tmp.path().join("r.json");
    let o = mid(&reference_args(&tmp.path().join("data"), path(&out), "center+random:2"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["samples"], 12);
    assert_eq!(r["strategy"], "center+random:2");
    assert_eq!(r["fusion"], "softmax");
    assert_eq!(r["mean_crops"], 3.0);
    assert!(r["top5"].as_f64().unwrap() >= r["top1"].as_f64().unwrap());
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn split_graph_run_and_csv_sweep() {
    let tmp = dataset(10);
    let out = tmp.path().join("r.csv");
    let f = fixtures().join("tiny_features.onnx");
    let h = fixtures().join("tiny_head.onnx");
    let o = mid(&[
        "eval", "--model-features", path(&f), "--model-head", path(&h),
        "--data-dir", path(&tmp.path().join("data")), "--resize", "64", "--crop", "56",
        "--strategy", "random:1", "--fuse", "feature", "--sweep", "1,2,4",
        "--out", path(&out), "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "strategy,fusion,crop_count,samples,top1,top5");
    assert!(lines[3].starts_with("random:1,feature,4,10,"));
}

#[test]
fn feature_fusion_on_monolithic_graph_is_exit_2() {
    let tmp = dataset(4);
    let out = tmp.path().join("r.json");
    let m = fixtures().join("tiny_monolithic.onnx");
    let o = mid(&[
        "eval", "--model", path(&m), "--data-dir", path(&tmp.path().join("data")),
        "--resize", "64", "--crop", "56", "--fuse", "feature", "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--fuse logit"));

    let o = mid(&[
        "eval", "--model", path(&m), "--data-dir", path(&tmp.path().join("data")),
        "--resize", "64", "--crop", "56", "--fuse", "logit", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mismatched_head_is_exit_2() {
    let tmp = dataset(4);
    let out = tmp.path().join("r.json");
    let o = mid(&[
        "eval", "--model-features", path(&fixtures().join("tiny_features.onnx")),
        "--model-head", path(&fixtures().join("tiny_head_32.onnx")),
        "--data-dir", path(&tmp.path().join("data")), "--resize", "64", "--crop", "56",
        "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn preset_dimension_mismatch_is_exit_2() {
    // resnet50 declares 2048 features and 1000 classes; the tiny graph has 16 and 10.
    let tmp = dataset(4);
    let out = tmp.path().join("r.json");
    let o = mid(&[
        "eval", "--model-features", path(&fixtures().join("tiny_features.onnx")),
        "--model-head", path(&fixtures().join("tiny_head.onnx")),
        "--data-dir", path(&tmp.path().join("data")), "--preset", "resnet50", "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_preset_is_exit_2() {
    let tmp = dataset(4);
    let out = tmp.path().join("r.json");
    let o = mid(&[
        "eval", "--reference-backend", "1", "--data-dir", path(&tmp.path().join("data")),
        "--preset", "no_such_net", "--out", path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_env_var_overrides_registry() {
    let tmp = dataset(6);
    let presets = tmp.path().join("presets.json");
    std::fs::write(
        &presets,
        r#"{"tiny": {"resize_shorter_side": 64, "crop_size": 48, "interpolation": "bicubic",
            "antialias": true, "feature_dim": 12, "num_classes": 10}}"#,
    )
    .unwrap();
    let out = tmp.path().join("r.json");
    let run = |with_env: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mid"));
        cmd.args([
            "eval", "--reference-backend", "2", "--data-dir", path(&tmp.path().join("data")),
            "--preset", "tiny", "--out", path(&out),
        ]);
        if with_env {
            cmd.env("MID_PRESETS", &presets);
        } else {
            cmd.env_remove("MID_PRESETS");
        }
        cmd.output().unwrap()
    };
    let o = run(true);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out)["model"], "tiny");
    assert_eq!(run(false).status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_mid"))
        .arg("presets")
        .env("MID_PRESETS", &presets)
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("tiny"));
}

#[test]
fn builtin_presets_listed() {
    let o = mid(&["presets"]);
    let listing = String::from_utf8_lossy(&o.stdout);
    for name in ["resnet18", "resnet50", "efficientnet_b1_ap", "efficientnet_l2_ns", "nfnet_f6"] {
        assert!(listing.lines().any(|l| l.starts_with(&format!("{name} "))), "{name}");
    }
}

#[test]
fn empty_dataset_is_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("cls")).unwrap();
    let out = tmp.path().join("r.json");
    let o = mid(&reference_args(tmp.path(), path(&out), "center"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupt_images_beyond_one_percent_are_exit_3() {
    let tmp = dataset(20);
    let data = tmp.path().join("data");
    std::fs::write(data.join("class1").join("zz_broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("r.json");
    let o = mid(&reference_args(&data, path(&out), "center"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn one_corrupt_image_in_a_hundred_and_one_is_skipped() {
    let tmp = dataset(100);
    let data = tmp.path().join("data");
    std::fs::write(data.join("class1").join("zz_broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("r.json");
    let mut args = reference_args(&data, path(&out), "center");
    args.extend(["--limit", "101"]);
    let o = mid(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!((r["samples"].as_u64(), r["failed"].as_u64()), (Some(100), Some(1)));
    assert_eq!(r["failures"][0]["path"], "class1/zz_broken.png");
}

#[test]
fn bad_strategy_is_rejected_by_parser() {
    let tmp = dataset(2);
    let out = tmp.path().join("r.json");
    assert_eq!(mid(&reference_args(&tmp.path().join("data"), path(&out), "random:0")).status.code(), Some(2));
}
