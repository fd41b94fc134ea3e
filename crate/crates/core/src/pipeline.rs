//! End-to-end runs shared by the command line and the acceptance suite:
//! building examples from samples, the Road-cut baseline, modality and N
//! ablations, and the reliability cascade.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{polygon_iou, Polygon};
use crate::model::{evaluate_model, prediction_iou, train, Aoitr, EpochMetrics, EvalReport, Example, ForwardOptions, Modality, ModelConfig, TrainOptions};
use crate::reliability::{
    auc, cross_val_scores, extract_features, pr_curve, pr_threshold, Cascade, CascadeConfig, PrPoint,
    ReliabilityFeatures, ThresholdReport,
};
use crate::roadcut::{polygonize, roadcut_aoi};
use crate::synthgen::{Dataset, GeoSample};

/// Training examples with `n` boundary nodes, in sample order.
pub fn build_examples(samples: &[GeoSample], n: usize) -> Result<Vec<Example>> {
    samples.par_iter().map(|s| s.to_example(n)).collect()
}

/// Road-cut polygon of a sample in normalized patch coordinates.
pub fn roadcut_polygon(sample: &GeoSample) -> Option<Polygon> {
    let faces = polygonize(&sample.roads, &sample.bbox);
    let face = roadcut_aoi(&sample.core, &faces, &sample.roads)?;
    Polygon::new(face.vertices().iter().map(|p| sample.bbox.normalize(*p)).collect()).ok()
}

/// Road-cut IoU per sample; samples without a face score 0.
pub fn evaluate_roadcut(samples: &[GeoSample]) -> Result<EvalReport> {
    let ious = samples
        .par_iter()
        .map(|s| {
            let truth = s.normalized_aoi()?;
            Ok(roadcut_polygon(s).and_then(|p| polygon_iou(&p, &truth).ok()).unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let categories: Vec<_> = samples.iter().map(GeoSample::category).collect();
    EvalReport::from_ious(ious, &categories)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `modality` or `n-points`.
    pub group: &'static str,
    pub condition: String,
    pub n_points: usize,
    pub miou: f64,
    pub high_iou: f64,
    /// mIoU of the unablated model the row compares against.
    pub reference_miou: f64,
}

impl AblationRow {
    pub fn drop(&self) -> f64 {
        self.reference_miou - self.miou
    }
}

/// One row per removed prior, evaluated on the trained model. Imagery
/// noise is seeded per example from `seed`.
pub fn modality_ablation(model: &Aoitr, val: &[Example], seed: u64) -> Result<(EvalReport, Vec<AblationRow>)> {
    let full = evaluate_model(model, val, ForwardOptions::default())?;
    let n = model.config().n_points;
    let rows = Modality::ALL
        .iter()
        .map(|&m| {
            let ious = val
                .par_iter()
                .enumerate()
                .map(|(i, ex)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let (input, opts) = m.apply(&ex.input, &mut rng);
                    Ok(prediction_iou(ex, &model.predict_with(&input, opts)?.prediction.points()))
                })
                .collect::<Result<Vec<f64>>>()?;
            let categories: Vec<_> = val.iter().map(|ex| ex.input.category).collect();
            let report = EvalReport::from_ious(ious, &categories)?;
            Ok(AblationRow {
                group: "modality",
                condition: format!("without-{}", m.as_str()),
                n_points: n,
                miou: report.summary.miou,
                high_iou: report.summary.high_iou_rate,
                reference_miou: full.summary.miou,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((full, rows))
}

/// Retrain and evaluate once per `n`.
pub fn n_sweep(
    dataset: &Dataset,
    ns: &[usize],
    model: &ModelConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(usize, &EpochMetrics),
) -> Result<Vec<AblationRow>> {
    ns.iter()
        .map(|&n| {
            let train_set = build_examples(&dataset.train, n)?;
            let val = build_examples(&dataset.val, n)?;
            let mut m = Aoitr::new(&ModelConfig { n_points: n, ..model.clone() })?;
            train(&mut m, &train_set, Some(&val), opts, |e| on_epoch(n, e))?;
            let r = evaluate_model(&m, &val, ForwardOptions::default())?;
            Ok(AblationRow {
                group: "n-points",
                condition: format!("n={n}"),
                n_points: n,
                miou: r.summary.miou,
                high_iou: r.summary.high_iou_rate,
                reference_miou: r.summary.miou,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("group,condition,n_points,mIoU,highIoU,reference_mIoU\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.group, r.condition, r.n_points, r.miou, r.high_iou, r.reference_miou);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilitySettings {
    pub cascade: CascadeConfig,
    pub target_precision: f64,
    pub folds: usize,
}

impl Default for ReliabilitySettings {
    fn default() -> Self {
        Self { cascade: CascadeConfig::default(), target_precision: 0.8, folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    /// Validation AUC of the cascade trained on the training split.
    pub auc: f64,
    pub threshold: ThresholdReport,
    pub curve: Vec<PrPoint>,
    /// Out-of-fold AUC on the training split with permuted labels.
    pub null_auc: f64,
}

/// Features of every sample's candidate polygon; the embedding is the
/// model's category-token output (empty without a model).
pub fn reliability_features(model: Option<&Aoitr>, samples: &[GeoSample], tz_offset_hours: i32) -> Result<Vec<ReliabilityFeatures>> {
    samples
        .par_iter()
        .map(|s| {
            let embedding = match model {
                Some(m) => m.predict(&s.model_input(m.config().n_points)?)?.o_cat,
                None => Vec::new(),
            };
            extract_features(s, &s.candidate, embedding, tz_offset_hours)
        })
        .collect()
}

pub fn labels(samples: &[GeoSample]) -> Vec<bool> {
    samples.iter().map(|s| s.label.reliable).collect()
}

/// Everything produced by [`run_reliability`].
#[derive(Debug, Clone)]
pub struct ReliabilityRun {
    pub cascade: Cascade,
    pub report: ReliabilityReport,
    pub train_features: Vec<ReliabilityFeatures>,
    pub val_features: Vec<ReliabilityFeatures>,
}

/// Train the cascade on the training split and score the validation split;
/// also measure the permutation null on the training split.
pub fn run_reliability(model: Option<&Aoitr>, dataset: &Dataset, settings: &ReliabilitySettings) -> Result<ReliabilityRun> {
    if dataset.val.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let tz = dataset.config.tz_offset_hours;
    let train_features = reliability_features(model, &dataset.train, tz)?;
    let val_features = reliability_features(model, &dataset.val, tz)?;
    let train_x: Vec<Vec<f64>> = train_features.iter().map(ReliabilityFeatures::to_vec).collect();
    let val_x: Vec<Vec<f64>> = val_features.iter().map(ReliabilityFeatures::to_vec).collect();
    let (train_y, val_y) = (labels(&dataset.train), labels(&dataset.val));

    let cascade = Cascade::train(&train_x, &train_y, &settings.cascade)?;
    let scores = cascade.predict(&val_x)?;
    let report_auc = auc(&scores, &val_y)?;
    let threshold = pr_threshold(&scores, &val_y, settings.target_precision)?;
    let curve = pr_curve(&scores, &val_y)?;

    let mut permuted = train_y.clone();
    permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.cascade.seed ^ 0x9e11));
    let null_scores = cross_val_scores(&train_x, &permuted, &settings.cascade, settings.folds)?;
    let null_auc = auc(&null_scores, &permuted)?;
    Ok(ReliabilityRun {
        cascade,
        report: ReliabilityReport { auc: report_auc, threshold, curve, null_auc },
        train_features,
        val_features,
    })
}
