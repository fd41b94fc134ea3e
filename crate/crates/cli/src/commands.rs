//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use aoi_core::geo::geojson::{Feature, FeatureCollection};
use aoi_core::geo::Polygon;
use aoi_core::model::{evaluate_model, load_checkpoint, save_checkpoint, train, Aoitr, EvalReport, ForwardOptions};
use aoi_core::pipeline::{
    ablation_csv, build_examples, evaluate_roadcut, labels, modality_ablation, n_sweep, run_reliability,
    ReliabilitySettings,
};
use aoi_core::reliability::{features_csv, pr_csv};
use aoi_core::sampling::reconstruct_polygon;
use aoi_core::synthgen::Dataset;
use log::info;
use serde_json::json;

use crate::config::RunConfig;
use crate::{svg, AblateArgs, Cli, Command, ExportArgs, GenArgs, ReliabilityArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Reliability(a) => reliability(a),
        Command::Export(a) => export(a),
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = Dataset::read(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    info!("loaded {} training and {} validation samples from {}", ds.train.len(), ds.val.len(), dir.display());
    Ok(ds)
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    let per: serde_json::Map<String, serde_json::Value> = r
        .per_category
        .iter()
        .map(|(c, s)| (c.to_string(), json!({"mIoU": s.miou, "highIoU": s.high_iou_rate, "count": s.count})))
        .collect();
    json!({"mIoU": r.summary.miou, "highIoU": r.summary.high_iou_rate, "count": r.summary.count, "per_category": per})
}

fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.common)?;
    if let Some(n) = a.samples {
        cfg.world.samples = n;
    }
    if let Some(c) = a.categories {
        cfg.world.categories = c;
    }
    if let Some(s) = a.image_size {
        cfg.world.image_size = s;
    }
    cfg.world.validate()?;
    prepare_out(&a.common.out)?;
    info!("generating {} samples (seed {})", cfg.world.samples, cfg.world.seed);
    let ds = Dataset::generate(&cfg.world)?;
    ds.write(&a.common.out)?;
    info!("wrote {} training and {} validation samples to {}", ds.train.len(), ds.val.len(), a.common.out.display());
    Ok(())
}

fn train_model(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<Aoitr> {
    let n = cfg.model.n_points;
    let train_set = build_examples(&ds.train, n)?;
    let val = build_examples(&ds.val, n)?;
    let mut model = Aoitr::new(&cfg.model)?;
    info!("training {} epochs on {} samples", cfg.train.epochs, train_set.len());
    let log = train(&mut model, &train_set, (!val.is_empty()).then_some(val.as_slice()), &cfg.train, |e| {
        info!("epoch {:>3}  loss {:.4}  mIoU {:.4}  highIoU {:.4}", e.epoch, e.loss, e.miou, e.high_iou)
    })
    .context("training")?;
    write(&out.join("metrics.csv"), log.to_csv())?;
    save_checkpoint(&model, &out.join("checkpoint.json"))?;
    Ok(model)
}

fn train_eval(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.common)?;
    cfg.apply_model_args(&a.model);
    cfg.model.validate()?;
    let ds = load_dataset(&a.data.data)?;
    if ds.val.is_empty() {
        bail!("the dataset has no validation split");
    }
    prepare_out(&a.common.out)?;
    let model = train_model(&cfg, &ds, &a.common.out)?;
    let val = build_examples(&ds.val, cfg.model.n_points)?;
    let ours = evaluate_model(&model, &val, ForwardOptions::default())?;
    let roadcut = evaluate_roadcut(&ds.val)?;
    info!("validation mIoU: model {:.4}, road-cut {:.4}", ours.summary.miou, roadcut.summary.miou);
    let csv = format!(
        "method,mIoU,highIoU\naoitr,{},{}\nroad-cut,{},{}\n",
        ours.summary.miou, ours.summary.high_iou_rate, roadcut.summary.miou, roadcut.summary.high_iou_rate
    );
    write(&a.common.out.join("eval.csv"), csv)?;
    let summary = json!({"aoitr": report_json(&ours), "road_cut": report_json(&roadcut), "config": cfg});
    write(&a.common.out.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn model_or_train(checkpoint: Option<&Path>, cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<Aoitr> {
    match checkpoint {
        Some(p) => load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())),
        None => train_model(cfg, ds, out),
    }
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.common)?;
    cfg.apply_model_args(&a.model);
    cfg.model.validate()?;
    if a.n_values.iter().any(|&n| n < 3) {
        bail!("every N must be at least 3");
    }
    let ds = load_dataset(&a.data.data)?;
    prepare_out(&a.common.out)?;
    let model = model_or_train(a.checkpoint.as_deref(), &cfg, &ds, &a.common.out)?;
    let val = build_examples(&ds.val, model.config().n_points)?;
    let (full, mut rows) = modality_ablation(&model, &val, cfg.world.seed)?;
    info!("full model mIoU {:.4}", full.summary.miou);
    for r in &rows {
        info!("{:<24} mIoU {:.4} (drop {:+.4})", r.condition, r.miou, r.drop());
    }
    let sweep = n_sweep(&ds, &a.n_values, &cfg.model, &cfg.train, |n, e| {
        info!("N={n} epoch {:>3}  loss {:.4}  mIoU {:.4}", e.epoch, e.loss, e.miou)
    })?;
    rows.extend(sweep);
    write(&a.common.out.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(())
}

fn reliability(a: ReliabilityArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.cascade.epochs = e;
    }
    if !(0.0..=1.0).contains(&a.target_precision) {
        bail!("target precision must lie in [0, 1]");
    }
    let model = a
        .checkpoint
        .as_deref()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()?;
    let ds = load_dataset(&a.data.data)?;
    prepare_out(&a.common.out)?;
    let settings = ReliabilitySettings { cascade: cfg.cascade.clone(), target_precision: a.target_precision, folds: 5 };
    let run = run_reliability(model.as_ref(), &ds, &settings)?;
    let r = &run.report;
    let t = r.threshold;
    if t.attainable {
        info!(
            "AUC {:.4}; precision {:.3} at recall {:.3} (threshold {:.4})",
            r.auc, t.point.precision, t.point.recall, t.point.threshold
        );
    } else {
        info!("AUC {:.4}; target precision {} unattainable, best {:.3}", r.auc, t.target_precision, t.point.precision);
    }
    info!("permutation-null AUC {:.4}", r.null_auc);
    write(&a.common.out.join("pr.csv"), pr_csv(&r.curve))?;
    let ids: Vec<u64> = ds.all().map(|s| s.id).collect();
    let mut all_labels = labels(&ds.train);
    all_labels.extend(labels(&ds.val));
    let rows: Vec<_> = run.train_features.iter().chain(&run.val_features).cloned().collect();
    write(&a.common.out.join("features.csv"), features_csv(&ids, &all_labels, &rows)?)?;
    write(&a.common.out.join("cascade.json"), serde_json::to_string(&run.cascade)?)?;
    let summary = json!({
        "auc": r.auc,
        "null_auc": r.null_auc,
        "target_precision": t.target_precision,
        "attainable": t.attainable,
        "threshold": t.point.threshold,
        "precision": t.point.precision,
        "recall": t.point.recall,
    });
    write(&a.common.out.join("reliability.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading predictions model {}", a.checkpoint.display()))?;
    let ds = load_dataset(&a.data.data)?;
    prepare_out(&a.common.out)?;
    let n = model.config().n_points;
    let take = a.limit.unwrap_or(ds.val.len());
    for s in ds.val.iter().take(take) {
        let input = s.model_input(n)?;
        let nodes = model.predict(&input)?.prediction.points();
        let truth = s.normalized_aoi()?;
        let to_geo = |p: &aoi_core::geo::GeoPoint| s.bbox.denormalize(*p);
        let mut fc = FeatureCollection::default();
        fc.push(Feature::polygon(&s.aoi).with("role", "truth").with("sample_id", s.id));
        match reconstruct_polygon(&nodes).and_then(|p| Polygon::new(p.vertices().iter().map(to_geo).collect())) {
            Ok(pred) => fc.push(Feature::polygon(&pred).with("role", "prediction").with("sample_id", s.id)),
            Err(e) => log::warn!("sample {}: degenerate prediction ({e})", s.id),
        }
        for (k, r) in input.refs.iter().enumerate() {
            fc.push(Feature::point(to_geo(r)).with("role", "ref").with("slot", k as u64));
        }
        let stem = format!("{:06}", s.id);
        write(&a.common.out.join(format!("{stem}.geojson")), fc.to_json()?)?;
        let size = s.patch.width();
        write(&a.common.out.join(format!("{stem}.svg")), svg::overlay(size, truth.vertices(), &nodes, &input.refs))?;
    }
    info!("exported {} samples to {}", take.min(ds.val.len()), a.common.out.display());
    Ok(())
}
