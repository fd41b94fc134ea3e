//! Loss, optimizer, training loop, checkpoints and the metric log.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, target_tensor, Aoitr, Example, ForwardOptions, Network};
use crate::autograd::{Grads, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Sum of absolute coordinate differences between two equally long node lists.
pub fn l1_loss(truth: &[GeoPoint], predicted: &[GeoPoint]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!("l1 over {} vs {} nodes", truth.len(), predicted.len())));
    }
    Ok(truth.iter().zip(predicted).map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs()).sum())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(id).data(), self.v.get(id).data());
            let p = params.get_mut(id).data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                *pi -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Rescale the batch gradient when its global norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, learning_rate: 1e-3, seed: 0, grad_clip: Some(10.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample L1 loss over the epoch.
    pub loss: f64,
    pub miou: f64,
    pub high_iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch,loss,mIoU,highIoU";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.miou, r.high_iou));
        }
        s
    }
}

/// Loss and parameter gradients of one example.
fn example_grads(network: &Network, params: &ParamStore, ex: &Example) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let v = network.forward(&mut g, params, &ex.input, ForwardOptions::default())?;
    let target = g.constant(target_tensor(&ex.target));
    let loss = g.l1(v.p_hat, target)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    let mut grads = params.zeros_like();
    g.param_grads(&mut grads);
    Ok((value, grads))
}

/// One optimizer step on a batch; returns the mean per-sample loss.
///
/// Per-example gradients may be computed in parallel but are always summed
/// in batch order, so the result does not depend on the thread count.
pub fn train_step(model: &mut Aoitr, adam: &mut Adam, batch: &[&Example], grad_clip: Option<f64>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let network = &model.network;
    let params = &model.params;
    let parts: Vec<(f64, Grads)> =
        batch.par_iter().map(|ex| example_grads(network, params, ex)).collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, gr) in &parts {
        loss += l;
        total.add(gr);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    loss *= inv;
    let step = adam.steps() as usize + 1;
    if !loss.is_finite() {
        return Err(Error::Diverged { step, loss });
    }
    let norm = total.iter().flat_map(|(_, t)| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Diverged { step, loss: norm });
    }
    if let Some(c) = grad_clip {
        if norm > c {
            total.scale(c / norm);
        }
    }
    adam.update(&mut model.params, &total);
    Ok(loss)
}

/// Train for `opts.epochs` epochs, evaluating on `val` (or on the training
/// set when no validation split is given) after each epoch.
pub fn train(
    model: &mut Aoitr,
    train_set: &[Example],
    val: Option<&[Example]>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<MetricsLog> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(&model.params, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = MetricsLog::default();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(model, &mut adam, &batch, opts.grad_clip)? * batch.len() as f64;
        }
        let report = evaluate_model(model, val.unwrap_or(train_set), ForwardOptions::default())?;
        let row = EpochMetrics {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            miou: report.summary.miou,
            high_iou: report.summary.high_iou_rate,
        };
        log::info!("epoch {epoch}: loss {:.5} mIoU {:.4} highIoU {:.4}", row.loss, row.miou, row.high_iou);
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok(log)
}

/// Serialized weights: the parameter layout plus named tensors (row-major
/// `f64` arrays with their shapes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: Network,
    pub params: ParamStore,
}

const CHECKPOINT_FORMAT: &str = "aoitr-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Aoitr, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        network: model.network.clone(),
        params: model.params.clone(),
    };
    fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Aoitr> {
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
    }
    let fresh = Aoitr::new(ck.network.config())?;
    if fresh.network != ck.network || fresh.params.len() != ck.params.len() {
        return Err(Error::Format("checkpoint layout does not match its config".into()));
    }
    for ((name, a), (_, b)) in fresh.params.iter().zip(ck.params.iter()) {
        if a.shape() != b.shape() {
            return Err(Error::Format(format!("parameter {name} has shape {:?}, expected {:?}", b.shape(), a.shape())));
        }
    }
    Ok(Aoitr { network: ck.network, params: ck.params })
}
