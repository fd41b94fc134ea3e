use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use aoi_core::geo::geojson::FeatureCollection;
use aoi_core::geo::polygon_iou;
use aoi_core::model::{load_checkpoint, prediction_iou};
use aoi_core::sampling::reconstruct_polygon;
use aoi_core::synthgen::Dataset;

const TINY: &str = r#"{
  "world": {"samples": 36, "image_size": 32, "lbs_points": 40},
  "model": {"n_points": 8, "d_model": 16, "heads": 2, "encoder_layers": 1, "decoder_layers": 1,
            "ffn_hidden": 16, "stem_hidden": 8},
  "train": {"epochs": 1, "batch_size": 8},
  "cascade": {"epochs": 5, "hidden": 8}
}"#;

fn aoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi")).args(args).env("RUST_LOG", "warn").output().expect("spawn aoi")
}

fn ok(args: &[&str]) -> Output {
    let out = aoi(args);
    assert!(out.status.success(), "aoi {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    ok(&["gen", "--config", s(&config), "--out", s(&data)]);
    Fixture { _dir: dir, root, config, data }
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_reproducible_and_creates_nested_output() {
    let f = fixture();
    let again = f.root.join("a/b/c");
    ok(&["gen", "--config", s(&f.config), "--out", s(&again)]);
    let (x, y) = (read_tree(&f.data), read_tree(&again));
    assert!(!x.is_empty());
    assert_eq!(x, y);
    let ds = Dataset::read(&f.data).unwrap();
    assert_eq!(ds.train.len() + ds.val.len(), 36);
}

#[test]
fn seed_flag_changes_the_world() {
    let f = fixture();
    let other = f.root.join("other");
    ok(&["gen", "--config", s(&f.config), "--seed", "99", "--out", s(&other)]);
    assert_ne!(read_tree(&f.data), read_tree(&other));
}

#[test]
fn invalid_category_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aoi(&["gen", "--categories", "3,42", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails_cleanly() {
    let f = fixture();
    let out = aoi(&["export", "--data", s(&f.data), "--checkpoint", s(&f.root.join("nope.json")), "--out", s(&f.root.join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn train_ablate_reliability_export() {
    let f = fixture();
    let run = f.root.join("run");
    ok(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&run)]);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,loss,mIoU,highIoU"));
    assert_eq!(lines.count(), 1);
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 3);
    assert!(eval.contains("\naoitr,") && eval.contains("\nroad-cut,"));
    let checkpoint = run.join("checkpoint.json");
    assert!(checkpoint.exists());

    let abl = f.root.join("abl");
    ok(&[
        "ablate", "--config", s(&f.config), "--data", s(&f.data), "--checkpoint", s(&checkpoint),
        "--n-values", "4,8", "--out", s(&abl),
    ]);
    let csv = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 2);
    assert_eq!(csv.lines().filter(|l| l.starts_with("modality,without-")).count(), 4);

    let rel = f.root.join("rel");
    ok(&["reliability", "--config", s(&f.config), "--data", s(&f.data), "--checkpoint", s(&checkpoint), "--out", s(&rel)]);
    let pr = fs::read_to_string(rel.join("pr.csv")).unwrap();
    let mut lines = pr.lines();
    assert_eq!(lines.next(), Some("threshold,precision,recall"));
    let mut n = 0;
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)), "{l}");
        n += 1;
    }
    assert!(n > 0);
    let features = fs::read_to_string(rel.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 1 + 36);
    assert!(rel.join("cascade.json").exists());

    let exp = f.root.join("exp");
    ok(&["export", "--data", s(&f.data), "--checkpoint", s(&checkpoint), "--limit", "2", "--out", s(&exp)]);
    let ds = Dataset::read(&f.data).unwrap();
    let model = load_checkpoint(&checkpoint).unwrap();
    for sample in ds.val.iter().take(2) {
        let stem = format!("{:06}", sample.id);
        let fc = FeatureCollection::from_json(&fs::read_to_string(exp.join(format!("{stem}.geojson"))).unwrap()).unwrap();
        let truth = fc.with_role("truth").next().unwrap().as_polygon().unwrap();
        assert!(polygon_iou(&truth, &sample.aoi).unwrap() > 1.0 - 1e-9);
        let ex = sample.to_example(8).unwrap();
        let nodes = model.predict(&ex.input).unwrap().prediction.points();
        if reconstruct_polygon(&nodes).is_ok() {
            let pred = fc.with_role("prediction").next().unwrap().as_polygon().unwrap();
            let reimported = polygon_iou(&pred, &truth).unwrap();
            assert!((reimported - prediction_iou(&ex, &nodes)).abs() < 1e-9);
        }
        assert_eq!(fc.with_role("ref").count(), 8);
        let svg = fs::read_to_string(exp.join(format!("{stem}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("class=\"prediction\""));
    }
    assert_eq!(fs::read_dir(&exp).unwrap().count(), 4);
}

#[test]
fn smoke_train_is_quick_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--seed", "7", "--samples", "100", "--out", s(&data)]);
    let start = Instant::now();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--seed", "7", "--epochs", "2", "--data", s(&data), "--out", s(&a)]);
    assert!(start.elapsed() < Duration::from_secs(300), "{:?}", start.elapsed());
    ok(&["train", "--seed", "7", "--epochs", "2", "--data", s(&data), "--out", s(&b)]);
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
}
