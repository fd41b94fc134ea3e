//! Transformer building blocks on top of the autograd tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::imagery::uniform_init;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self::with_scale(store, name, d_in, d_out, 1.0, rng)
    }

    /// Uniform fan-in init multiplied by `scale` (a small scale keeps an
    /// output head close to its bias at initialization).
    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = uniform_init(rng, d_in, d_out, d_in);
        w.data_mut().iter_mut().for_each(|v| *v *= scale);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, d_out));
        Self { weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, d, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, d));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
        })
    }

    /// Queries from `x` (`m×d`) attend over `context` (`t×d`). Also returns
    /// the per-head `m×t` attention weights.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        context: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let d = g.shape(x).1;
        if g.shape(context).1 != d {
            return Err(Error::Shape(format!("attention width {d} vs context {:?}", g.shape(context))));
        }
        let dh = d / self.heads;
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, context)?;
        let v = self.v.forward(g, store, context)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            weights.push(a);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.out.forward(g, store, cat)?, weights))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }
}

/// Pre-norm encoder layer: `x + SA(LN x)`, then `x + FFN(LN x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, store, x)?;
        let (a, _) = self.attn.forward(g, store, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        g.add(x, f)
    }
}

/// Pre-norm decoder layer: self-attention, cross-attention over the encoder
/// memory, then FFN, each with a residual connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: MultiHeadAttention,
    norm2: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, rng)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng),
        })
    }

    /// Returns the layer output and the cross-attention weights per head.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, memory: Var) -> Result<(Var, Vec<Var>)> {
        let h = self.norm1.forward(g, store, x)?;
        let (a, _) = self.self_attn.forward(g, store, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, store, x)?;
        let (c, w) = self.cross_attn.forward(g, store, h, memory)?;
        let x = g.add(x, c)?;
        let h = self.norm3.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        Ok((g.add(x, f)?, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::check_params;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(21)
    }

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut r).unwrap();
        let mut g = Graph::new();
        let x = g.constant(random(&mut r, 3, 8));
        let ctx = g.constant(random(&mut r, 5, 8));
        let (out, w) = mha.forward(&mut g, &store, x, ctx).unwrap();
        assert_eq!(g.shape(out), (3, 8));
        for a in w {
            let t = g.value(a);
            assert_eq!(t.shape(), (3, 5));
            for i in 0..3 {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 10, 4, &mut rng()).is_err());
    }

    #[test]
    fn encoder_layer_gradients_on_two_tokens() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let layer = EncoderLayer::new(&mut store, "enc", 8, 2, 16, &mut r).unwrap();
        let x = random(&mut r, 2, 8);
        let target = random(&mut r, 2, 8);
        let worst = check_params(&mut store, 120, |s, g| {
            let xv = g.constant(x.clone());
            let y = layer.forward(g, s, xv).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(y, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.sum_all(sq)
        });
        assert!(worst < 1e-4, "worst {worst}");
    }

    #[test]
    fn decoder_layer_gradients() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let layer = DecoderLayer::new(&mut store, "dec", 8, 2, 16, &mut r).unwrap();
        let x = random(&mut r, 3, 8);
        let mem = random(&mut r, 4, 8);
        let target = random(&mut r, 3, 8);
        let worst = check_params(&mut store, 160, |s, g| {
            let xv = g.constant(x.clone());
            let m = g.constant(mem.clone());
            let (y, _) = layer.forward(g, s, xv, m).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(y, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.sum_all(sq)
        });
        assert!(worst < 1e-4, "worst {worst}");
    }
}
