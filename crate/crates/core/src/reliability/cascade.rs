//! The cascade classifier: a small GELU FFN with a two-class softmax.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Adam, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub hidden: usize,
    /// Number of hidden layers (the network has one more linear layer).
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { hidden: 32, hidden_layers: 2, epochs: 60, batch_size: 32, learning_rate: 2e-3, weight_decay: 1e-4, seed: 0 }
    }
}

/// Trained classifier with its input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    config: CascadeConfig,
    layers: Vec<Linear>,
    params: ParamStore,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn check_matrix(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().map(Vec::len).ok_or_else(|| Error::Empty("no feature rows".into()))?;
    if features.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("features must be finite".into()));
    }
    Ok(dim)
}

impl Cascade {
    /// Untrained network for `dim` inputs with identity standardization.
    pub fn new(dim: usize, config: CascadeConfig) -> Result<Self> {
        if dim == 0 || config.hidden == 0 || config.batch_size == 0 {
            return Err(Error::Config("cascade sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut d_in = dim;
        for i in 0..config.hidden_layers {
            layers.push(Linear::new(&mut params, &format!("cascade.{i}"), d_in, config.hidden, &mut rng));
            d_in = config.hidden;
        }
        layers.push(Linear::new(&mut params, "cascade.out", d_in, 2, &mut rng));
        Ok(Self { config, layers, params, mean: vec![0.0; dim], scale: vec![1.0; dim] })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, rows: &[&Vec<f64>]) -> Tensor {
        let dim = self.input_dim();
        let data =
            rows.iter().flat_map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j])).collect();
        Tensor::new(rows.len(), dim, data).expect("rows checked")
    }

    /// Logits for a standardized `B×dim` batch.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i < last {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }

    /// Mean cross-entropy of a batch; class 1 means reliable.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, x: &Tensor, labels: &[bool]) -> Result<Var> {
        let xv = g.constant(x.clone());
        let logits = self.logits(g, store, xv)?;
        let classes: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
        g.cross_entropy(logits, &classes)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Train on `features` (one row per candidate). Rows are put in a
    /// canonical order first, so the result does not depend on input order.
    pub fn train(features: &[Vec<f64>], labels: &[bool], config: &CascadeConfig) -> Result<Self> {
        let dim = check_matrix(features)?;
        if labels.len() != features.len() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), features.len())));
        }
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            return Err(Error::SingleClass("both reliable and unreliable rows are required".into()));
        }
        let mut canonical: Vec<usize> = (0..features.len()).collect();
        canonical.sort_by(|&a, &b| {
            features[a]
                .iter()
                .zip(&features[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(labels[a].cmp(&labels[b]))
        });
        let mut model = Self::new(dim, config.clone())?;
        let n = features.len() as f64;
        for j in 0..dim {
            let mean = canonical.iter().map(|&i| features[i][j]).sum::<f64>() / n;
            let var = canonical.iter().map(|&i| (features[i][j] - mean).powi(2)).sum::<f64>() / n;
            model.mean[j] = mean;
            model.scale[j] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xca5c_ade0);
        let mut adam = Adam::new(&model.params, config.learning_rate);
        for _ in 0..config.epochs {
            let mut order = canonical.clone();
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let rows: Vec<&Vec<f64>> = batch.iter().map(|&i| &features[i]).collect();
                let ys: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
                let x = model.standardize(&rows);
                let mut g = Graph::new();
                let loss = model.loss(&mut g, &model.params, &x, &ys)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged { step: adam.steps() as usize, loss: value });
                }
                g.backward(loss)?;
                let mut grads = model.params.zeros_like();
                g.param_grads(&mut grads);
                if config.weight_decay > 0.0 {
                    for layer in &model.layers {
                        let w = model.params.get(layer.weight()).clone();
                        let gw = grads.get_mut(layer.weight());
                        for (gv, wv) in gw.data_mut().iter_mut().zip(w.data()) {
                            *gv += config.weight_decay * wv;
                        }
                    }
                }
                adam.update(&mut model.params, &grads);
            }
        }
        Ok(model)
    }

    /// Probability that each row is reliable.
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        if check_matrix(features)? != self.input_dim() {
            return Err(Error::Shape(format!("expected {} features per row", self.input_dim())));
        }
        let rows: Vec<&Vec<f64>> = features.iter().collect();
        let x = self.standardize(&rows);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let logits = self.logits(&mut g, &self.params, xv)?;
        let t = g.value(logits);
        Ok((0..t.rows()).map(|r| crate::autograd::sigmoid(t.get(r, 1) - t.get(r, 0))).collect())
    }
}

/// Out-of-fold scores from `folds`-fold cross-validation with a seeded,
/// class-stratified fold assignment.
pub fn cross_val_scores(features: &[Vec<f64>], labels: &[bool], config: &CascadeConfig, folds: usize) -> Result<Vec<f64>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    if labels.len() != features.len() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), features.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf01d);
    let mut fold_of = vec![0; features.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let mut scores = vec![0.0; features.len()];
    for f in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..features.len()).partition(|&i| fold_of[i] != f);
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let ys: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = Cascade::train(&xs, &ys, config)?;
        let held: Vec<Vec<f64>> = test.iter().map(|&i| features[i].clone()).collect();
        for (i, s) in test.iter().zip(model.predict(&held)?) {
            scores[*i] = s;
        }
    }
    Ok(scores)
}
