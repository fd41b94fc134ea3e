//! Polygon-level evaluation: mIoU, high-IoU rate, per-category breakdown.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Aoitr, Example, ForwardOptions};
use crate::error::{Error, Result};
use crate::geo::{polygon_iou, Category, GeoPoint, IouSummary};
use crate::sampling::reconstruct_polygon;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub summary: IouSummary,
    /// Keyed by category code.
    pub per_category: BTreeMap<u8, IouSummary>,
    pub ious: Vec<f64>,
}

/// IoU of the polygon through `nodes` against `ex.truth`; degenerate
/// predictions score 0.
pub fn prediction_iou(ex: &Example, nodes: &[GeoPoint]) -> f64 {
    reconstruct_polygon(nodes).and_then(|p| polygon_iou(&p, &ex.truth)).unwrap_or(0.0)
}

/// Score any predictor that maps an example to boundary nodes.
pub fn evaluate<F>(examples: &[Example], predictor: F) -> Result<EvalReport>
where
    F: Fn(&Example) -> Result<Vec<GeoPoint>> + Sync,
{
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let ious = examples
        .par_iter()
        .map(|ex| predictor(ex).map(|nodes| prediction_iou(ex, &nodes)))
        .collect::<Result<Vec<f64>>>()?;
    let categories: Vec<Category> = examples.iter().map(|ex| ex.input.category).collect();
    EvalReport::from_ious(ious, &categories)
}

impl EvalReport {
    /// Summaries of per-example IoUs, overall and per category.
    pub fn from_ious(ious: Vec<f64>, categories: &[Category]) -> Result<Self> {
        if ious.len() != categories.len() {
            return Err(Error::Shape(format!("{} IoUs for {} categories", ious.len(), categories.len())));
        }
        let mut groups: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for (c, iou) in categories.iter().zip(&ious) {
            groups.entry(c.code()).or_default().push(*iou);
        }
        let per_category =
            groups.into_iter().map(|(c, v)| IouSummary::from_ious(&v).map(|s| (c, s))).collect::<Result<_>>()?;
        Ok(EvalReport { summary: IouSummary::from_ious(&ious)?, per_category, ious })
    }
}

pub fn evaluate_model(model: &Aoitr, examples: &[Example], opts: ForwardOptions) -> Result<EvalReport> {
    evaluate(examples, |ex| Ok(model.predict_with(&ex.input, opts)?.prediction.points()))
}
