//! The polygon regression transformer.
//!
//! Imagery goes through a token stem into a transformer encoder. A second
//! stem produces a query feature map that is sampled bilinearly at the core
//! POI (`P_L`) and at each reference point (`R_L`); together with a learned
//! category row (`P_C`) these form the decoder's content queries. The head
//! regresses initial vertices from the per-reference outputs and a
//! correction for all vertices from the category output.

mod eval;
mod layers;
mod train;

pub use eval::{evaluate, evaluate_model, prediction_iou, EvalReport};
pub use layers::{DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use train::{
    l1_loss, load_checkpoint, save_checkpoint, train, train_step, Adam, Checkpoint, EpochMetrics, MetricsLog,
    TrainOptions,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geo::{BBox, Category, GeoPoint, Polygon, RoadNetwork};
use crate::imagery::{
    grid_coords, grid_posenc, patch_input, posenc_2d, uniform_init, ConvStem, RasterPatch, StemSpec,
};
use crate::sampling::sample_road_refs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_points: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    pub stem_hidden: usize,
    /// Patch pixels per encoder token along each axis.
    pub token_stride: usize,
    /// Patch pixels per query-map cell along each axis.
    pub query_stride: usize,
    /// Bound on each offset coordinate (`p_res = scale · tanh(·)`).
    pub residual_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 24,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_hidden: 128,
            stem_hidden: 32,
            token_stride: 8,
            query_stride: 4,
            residual_scale: 0.25,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 3 {
            return Err(Error::Config(format!("N = {} but at least 3 points are needed", self.n_points)));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::Config(format!("d_model {} must be a multiple of 4", self.d_model)));
        }
        StemSpec::patchify(self.token_stride, self.stem_hidden, self.d_model)?;
        StemSpec::patchify(self.query_stride, self.stem_hidden, self.d_model)?;
        Ok(())
    }
}

/// Everything the network sees for one AOI, in normalized patch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub patch: RasterPatch,
    pub core: GeoPoint,
    pub category: Category,
    /// One reference point per ray slot.
    pub refs: Vec<GeoPoint>,
}

/// A model input with its regression target and ground-truth polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: ModelInput,
    /// Ground-truth boundary nodes, one per ray.
    pub target: Vec<GeoPoint>,
    pub truth: Polygon,
}

/// Test-time switches that remove one prior from the decoder queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    pub drop_location: bool,
    pub drop_category: bool,
}

/// Content queries: core-location row, category row, one row per reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentQueries {
    pub p_l: Tensor,
    pub p_c: Tensor,
    pub r_l: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonPrediction {
    pub p_init: Tensor,
    pub p_res: Tensor,
    pub p_hat: Tensor,
}

impl PolygonPrediction {
    pub fn points(&self) -> Vec<GeoPoint> {
        (0..self.p_hat.rows()).map(|k| GeoPoint::new(self.p_hat.get(k, 0), self.p_hat.get(k, 1))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub prediction: PolygonPrediction,
    /// Decoder output of the category token; the image embedding handed to
    /// the reliability classifier.
    pub o_cat: Vec<f64>,
}

/// Graph handles produced by [`Network::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub p_init: Var,
    pub p_res: Var,
    pub p_hat: Var,
    pub o_ref: Var,
    pub o_cat: Var,
}

/// Parameter layout; all weights live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: ModelConfig,
    token_stem: ConvStem,
    query_stem: ConvStem,
    category_embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Option<LayerNorm>,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Option<LayerNorm>,
    init_head: Linear,
    residual_head: Linear,
}

fn points_tensor(points: &[GeoPoint]) -> Tensor {
    Tensor::new(points.len(), 2, points.iter().flat_map(|p| [p.x, p.y]).collect()).expect("shape")
}

impl Network {
    pub fn new(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let token_spec = StemSpec::patchify(config.token_stride, config.stem_hidden, d)?;
        let query_spec = StemSpec::patchify(config.query_stride, config.stem_hidden, d)?;
        let token_stem = ConvStem::new(store, "token_stem", 3, &token_spec, &mut rng);
        let query_stem = ConvStem::new(store, "query_stem", 3, &query_spec, &mut rng);
        let mut emb = uniform_init(&mut rng, Category::COUNT, d, d);
        emb.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        let category_embedding = store.add("category_embedding", emb);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("encoder.{i}"), d, config.heads, config.ffn_hidden, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = (config.encoder_layers > 0).then(|| LayerNorm::new(store, "encoder.norm", d));
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(store, &format!("decoder.{i}"), d, config.heads, config.ffn_hidden, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = (config.decoder_layers > 0).then(|| LayerNorm::new(store, "decoder.norm", d));
        let init_head = Linear::with_scale(store, "head.init", d, 2, 0.1, &mut rng);
        let residual_head = Linear::with_scale(store, "head.residual", d, 2 * config.n_points, 0.1, &mut rng);
        Ok(Self {
            config: config.clone(),
            token_stem,
            query_stem,
            category_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            init_head,
            residual_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_head(&self) -> &Linear {
        &self.init_head
    }

    pub fn residual_head(&self) -> &Linear {
        &self.residual_head
    }

    /// Encoder tokens plus positional encodings, run through the encoder stack.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, tokens: Var, posenc: Var) -> Result<Var> {
        if g.shape(tokens).1 != self.config.d_model {
            return Err(Error::Shape(format!("token width {} ≠ d_model {}", g.shape(tokens).1, self.config.d_model)));
        }
        let mut x = g.add(tokens, posenc)?;
        for layer in &self.encoder {
            x = layer.forward(g, store, x)?;
        }
        match &self.encoder_norm {
            Some(n) => n.forward(g, store, x),
            None => Ok(x),
        }
    }

    /// Sample `P_L` at the core and `R_L` at each reference; select `P_C`.
    pub fn content_queries(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fmap: Var,
        fmap_shape: (usize, usize),
        core: GeoPoint,
        category: Category,
        refs: &[GeoPoint],
    ) -> Result<(Var, Var, Var)> {
        let (h, w) = fmap_shape;
        let grid = |p: &GeoPoint| {
            let (x, y) = grid_coords(*p, h, w);
            [x, y]
        };
        let core_pt = g.constant(Tensor::new(1, 2, grid(&core).to_vec())?);
        let p_l = g.bilinear(fmap, core_pt, h, w)?;
        let ref_pts = Tensor::new(refs.len(), 2, refs.iter().flat_map(grid).collect())?;
        let ref_pts = g.constant(ref_pts);
        let r_l = g.bilinear(fmap, ref_pts, h, w)?;
        let d = self.config.d_model;
        let table = g.param(store, self.category_embedding);
        let row = category.index();
        let p_c = g.gather(table, (row * d..(row + 1) * d).collect(), 1, d)?;
        Ok((p_l, p_c, r_l))
    }

    /// Query tokens (`R_L + P_L` per reference, then `P_C`) with positional
    /// queries added, through the decoder stack. Returns `(O_ref, O_cat)`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p_l: Option<Var>,
        p_c: Option<Var>,
        r_l: Var,
        positional: Var,
        memory: Var,
    ) -> Result<(Var, Var)> {
        let (n, d) = g.shape(r_l);
        if g.shape(positional) != (n + 1, d) || g.shape(memory).1 != d {
            return Err(Error::Shape(format!(
                "decoder queries {n}x{d} with positional {:?} and memory {:?}",
                g.shape(positional),
                g.shape(memory)
            )));
        }
        let refs = match p_l {
            Some(p) => g.add_row(r_l, p)?,
            None => r_l,
        };
        let cat = match p_c {
            Some(p) => p,
            None => g.constant(Tensor::zeros(1, d)),
        };
        let tokens = g.concat_rows(&[refs, cat])?;
        let mut x = g.add(tokens, positional)?;
        for layer in &self.decoder {
            x = layer.forward(g, store, x, memory)?.0;
        }
        if let Some(norm) = &self.decoder_norm {
            x = norm.forward(g, store, x)?;
        }
        Ok((g.slice_rows(x, 0, n)?, g.slice_rows(x, n, 1)?))
    }

    /// `p_init = σ(W·O_ref)`, `p_res = s·tanh(W'·O_cat)` reshaped to `N×2`.
    pub fn regression_head(&self, g: &mut Graph, store: &ParamStore, o_ref: Var, o_cat: Var) -> Result<(Var, Var, Var)> {
        let n = g.shape(o_ref).0;
        if n != self.config.n_points {
            return Err(Error::Shape(format!("{n} reference outputs for N = {}", self.config.n_points)));
        }
        let init = self.init_head.forward(g, store, o_ref)?;
        let p_init = g.sigmoid(init);
        let res = self.residual_head.forward(g, store, o_cat)?;
        let res = g.tanh(res);
        let res = g.scale(res, self.config.residual_scale);
        let p_res = g.reshape(res, n, 2)?;
        let p_hat = g.add(p_init, p_res)?;
        Ok((p_init, p_res, p_hat))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &ModelInput, opts: ForwardOptions) -> Result<ForwardVars> {
        let n = self.config.n_points;
        if input.refs.len() != n {
            return Err(Error::Shape(format!("{} reference points for N = {n}", input.refs.len())));
        }
        let d = self.config.d_model;
        let (ph, pw) = (input.patch.height(), input.patch.width());
        let pixels = g.constant(patch_input(&input.patch));
        let (tokens, th, tw) = self.token_stem.forward(g, store, pixels, ph, pw)?;
        let pe = g.constant(grid_posenc(th, tw, d));
        let memory = self.encode(g, store, tokens, pe)?;
        let (fmap, fh, fw) = self.query_stem.forward(g, store, pixels, ph, pw)?;
        let (p_l, p_c, r_l) =
            self.content_queries(g, store, fmap, (fh, fw), input.core, input.category, &input.refs)?;
        let positional: Vec<f64> = input
            .refs
            .iter()
            .chain(std::iter::once(&input.core))
            .flat_map(|p| posenc_2d(*p, d))
            .collect();
        let positional = g.constant(Tensor::new(n + 1, d, positional)?);
        let (o_ref, o_cat) = self.decode(
            g,
            store,
            (!opts.drop_location).then_some(p_l),
            (!opts.drop_category).then_some(p_c),
            r_l,
            positional,
            memory,
        )?;
        let (p_init, p_res, p_hat) = self.regression_head(g, store, o_ref, o_cat)?;
        Ok(ForwardVars { p_init, p_res, p_hat, o_ref, o_cat })
    }
}

/// A network together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Aoitr {
    pub network: Network,
    pub params: ParamStore,
}

impl Aoitr {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let network = Network::new(config, &mut params)?;
        Ok(Self { network, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn predict(&self, input: &ModelInput) -> Result<ForwardOutput> {
        self.predict_with(input, ForwardOptions::default())
    }

    pub fn predict_with(&self, input: &ModelInput, opts: ForwardOptions) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let v = self.network.forward(&mut g, &self.params, input, opts)?;
        let prediction = PolygonPrediction {
            p_init: g.value(v.p_init).clone(),
            p_res: g.value(v.p_res).clone(),
            p_hat: g.value(v.p_hat).clone(),
        };
        if !prediction.p_hat.is_finite() {
            return Err(Error::Diverged { step: 0, loss: f64::NAN });
        }
        Ok(ForwardOutput { prediction, o_cat: g.value(v.o_cat).data().to_vec() })
    }

    /// Content queries for an input, as plain values.
    pub fn content_queries(&self, input: &ModelInput) -> Result<ContentQueries> {
        let mut g = Graph::new();
        let (ph, pw) = (input.patch.height(), input.patch.width());
        let pixels = g.constant(patch_input(&input.patch));
        let (fmap, fh, fw) = self.network.query_stem.forward(&mut g, &self.params, pixels, ph, pw)?;
        let (p_l, p_c, r_l) =
            self.network.content_queries(&mut g, &self.params, fmap, (fh, fw), input.core, input.category, &input.refs)?;
        Ok(ContentQueries { p_l: g.value(p_l).clone(), p_c: g.value(p_c).clone(), r_l: g.value(r_l).clone() })
    }
}

/// A prior that can be removed from a trained model's input at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    CoreLocation,
    Category,
    RoadRefs,
    Imagery,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::CoreLocation, Modality::Category, Modality::RoadRefs, Modality::Imagery];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::CoreLocation => "core_location",
            Modality::Category => "category",
            Modality::RoadRefs => "road_refs",
            Modality::Imagery => "imagery",
        }
    }

    /// Forward options and a modified input with this prior removed.
    /// References fall back to the patch border along each ray; imagery is
    /// replaced by uniform noise drawn from `rng`.
    pub fn apply(self, input: &ModelInput, rng: &mut impl Rng) -> (ModelInput, ForwardOptions) {
        let mut out = input.clone();
        let mut opts = ForwardOptions::default();
        match self {
            Modality::CoreLocation => opts.drop_location = true,
            Modality::Category => opts.drop_category = true,
            Modality::RoadRefs => {
                let empty = RoadNetwork::empty();
                out.refs = sample_road_refs(&empty, input.core, input.refs.len(), &BBox::unit())
                    .map(|r| r.points)
                    .unwrap_or_else(|_| input.refs.clone());
            }
            Modality::Imagery => {
                let pixels: Vec<u8> = (0..input.patch.pixels().len()).map(|_| rng.gen()).collect();
                out.patch = RasterPatch::new(input.patch.width(), input.patch.height(), pixels, input.patch.bbox)
                    .expect("same shape");
            }
        }
        (out, opts)
    }
}

pub(crate) fn target_tensor(points: &[GeoPoint]) -> Tensor {
    points_tensor(points)
}

#[cfg(test)]
mod tests;
