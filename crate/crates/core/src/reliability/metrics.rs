//! Ranking metrics for reliability scores.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("both reliable and unreliable rows are required".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve (Mann-Whitney statistic; ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One cut of the PR curve: everything scoring `>= threshold` is called reliable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every distinct score, highest threshold first
/// (recall non-decreasing along the curve).
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut called) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            tp += usize::from(labels[order[i]]);
            called += 1;
            i += 1;
        }
        out.push(PrPoint { threshold: t, precision: tp as f64 / called as f64, recall: tp as f64 / pos as f64 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    pub point: PrPoint,
    pub target_precision: f64,
    /// False when no cut reaches the target; `point` is then the cut with
    /// the highest precision.
    pub attainable: bool,
}

/// Lowest threshold whose precision reaches `target`.
pub fn pr_threshold(scores: &[f64], labels: &[bool], target: f64) -> Result<ThresholdReport> {
    let curve = pr_curve(scores, labels)?;
    if let Some(p) = curve.iter().rev().find(|p| p.precision >= target) {
        return Ok(ThresholdReport { point: *p, target_precision: target, attainable: true });
    }
    let best = curve
        .iter()
        .copied()
        .max_by(|a, b| a.precision.total_cmp(&b.precision).then(a.recall.total_cmp(&b.recall)))
        .expect("non-empty curve");
    Ok(ThresholdReport { point: best, target_precision: target, attainable: false })
}

/// `threshold,precision,recall` rows.
pub fn pr_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}
