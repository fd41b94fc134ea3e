//! Strided convolutional stems mapping a raster patch to a token grid (for
//! the encoder) or to a query feature map (sampled bilinearly by the decoder
//! query builder), plus fixed 2-D sinusoidal positional encodings.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::RasterPatch;
use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub layers: Vec<ConvLayerSpec>,
}

impl StemSpec {
    /// Non-overlapping `k = s` layers whose strides multiply to `total_stride`:
    /// a `first`-stride patchify layer followed by 2×2 layers.
    pub fn patchify(total_stride: usize, hidden: usize, out: usize) -> Result<Self> {
        if total_stride < 2 || !total_stride.is_power_of_two() {
            return Err(Error::Config(format!("stem stride {total_stride} must be a power of two ≥ 2")));
        }
        let first = if total_stride >= 4 { 4 } else { 2 };
        let mut layers = vec![ConvLayerSpec { kernel: first, stride: first, out_channels: hidden }];
        let mut s = total_stride / first;
        while s > 1 {
            layers.push(ConvLayerSpec { kernel: 2, stride: 2, out_channels: hidden });
            s /= 2;
        }
        layers.last_mut().expect("non-empty").out_channels = out;
        Ok(Self { layers })
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvLayer {
    spec: ConvLayerSpec,
    in_channels: usize,
    weight: ParamId,
    bias: ParamId,
}

/// A stack of valid (unpadded) strided convolutions with GELU between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStem {
    layers: Vec<ConvLayer>,
}

fn out_len(len: usize, k: usize, s: usize) -> Result<usize> {
    if len < k || (len - k) % s != 0 {
        return Err(Error::Shape(format!("input extent {len} incompatible with kernel {k} stride {s}")));
    }
    Ok((len - k) / s + 1)
}

pub(crate) fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let a = (3.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

impl ConvStem {
    pub fn new(store: &mut ParamStore, prefix: &str, in_channels: usize, spec: &StemSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut cin = in_channels;
        for (i, l) in spec.layers.iter().enumerate() {
            let fan_in = l.kernel * l.kernel * cin;
            let weight = store.add(format!("{prefix}.conv{i}.weight"), uniform_init(rng, fan_in, l.out_channels, fan_in));
            let bias = store.add(format!("{prefix}.conv{i}.bias"), Tensor::zeros(1, l.out_channels));
            layers.push(ConvLayer { spec: *l, in_channels: cin, weight, bias });
            cin = l.out_channels;
        }
        Self { layers }
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (height, width);
        for l in &self.layers {
            h = out_len(h, l.spec.kernel, l.spec.stride)?;
            w = out_len(w, l.spec.kernel, l.spec.stride)?;
        }
        Ok((h, w))
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_channels)
    }

    /// `input` is `height·width × channels` (row-major cells); returns the
    /// `h'·w' × out_channels` map and its grid shape.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        height: usize,
        width: usize,
    ) -> Result<(Var, usize, usize)> {
        let (mut x, mut h, mut w) = (input, height, width);
        for (i, l) in self.layers.iter().enumerate() {
            let (k, s, c) = (l.spec.kernel, l.spec.stride, l.in_channels);
            if g.shape(x) != (h * w, c) {
                return Err(Error::Shape(format!("conv{i} expects {}x{c}, got {:?}", h * w, g.shape(x))));
            }
            let (oh, ow) = (out_len(h, k, s)?, out_len(w, k, s)?);
            let cols = k * k * c;
            let mut index = Vec::with_capacity(oh * ow * cols);
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..k {
                        for kx in 0..k {
                            let cell = (oy * s + ky) * w + ox * s + kx;
                            index.extend((0..c).map(|ch| cell * c + ch));
                        }
                    }
                }
            }
            let patches = g.gather(x, index, oh * ow, cols)?;
            let wv = g.param(store, l.weight);
            let bv = g.param(store, l.bias);
            let y = g.matmul(patches, wv)?;
            let mut y = g.add_row(y, bv)?;
            if i + 1 < self.layers.len() {
                y = g.gelu(y);
            }
            x = y;
            h = oh;
            w = ow;
        }
        Ok((x, h, w))
    }
}

/// Patch pixels scaled to `[0, 1]` as a `height·width × 3` tensor.
pub fn patch_input(patch: &RasterPatch) -> Tensor {
    let data = patch.pixels().iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::new(patch.height() * patch.width(), 3, data).expect("raster shape")
}

/// Fixed 2-D sinusoidal encoding of a normalized location (`d` divisible by 4).
///
/// A quarter of the channels each hold `sin(f·x)`, `cos(f·x)`, `sin(f·y)`,
/// `cos(f·y)` with frequencies spaced geometrically from π to 64π.
pub fn posenc_2d(p: GeoPoint, d: usize) -> Vec<f64> {
    let q = d / 4;
    let mut out = Vec::with_capacity(d);
    for j in 0..q {
        let f = PI * 2f64.powf(6.0 * j as f64 / q.max(1) as f64);
        out.push((f * p.x).sin());
        out.push((f * p.x).cos());
        out.push((f * p.y).sin());
        out.push((f * p.y).cos());
    }
    out.resize(d, 0.0);
    out
}

/// Normalized location (`y` north-up) of the center of grid cell `(row, col)`.
pub fn cell_center(row: usize, col: usize, height: usize, width: usize) -> GeoPoint {
    GeoPoint::new((col as f64 + 0.5) / width as f64, 1.0 - (row as f64 + 0.5) / height as f64)
}

/// Continuous grid coordinates `(x, y)` of a normalized location, matching
/// the cell-center convention of [`cell_center`].
pub fn grid_coords(p: GeoPoint, height: usize, width: usize) -> (f64, f64) {
    (p.x * width as f64 - 0.5, (1.0 - p.y) * height as f64 - 0.5)
}

pub(crate) fn grid_posenc(height: usize, width: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(height * width * d);
    for r in 0..height {
        for c in 0..width {
            data.extend(posenc_2d(cell_center(r, c, height, width), d));
        }
    }
    Tensor::new(height * width, d, data).expect("shape")
}

/// Encoder input tokens with their positional encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub posenc: Tensor,
    pub height: usize,
    pub width: usize,
}

impl TokenGrid {
    /// Run the token stem on a patch.
    pub fn project(patch: &RasterPatch, stem: &ConvStem, store: &ParamStore) -> Result<Self> {
        let mut g = Graph::new();
        let input = g.constant(patch_input(patch));
        let (tokens, h, w) = stem.forward(&mut g, store, input, patch.height(), patch.width())?;
        let d = stem.out_channels();
        Ok(Self { tokens: g.value(tokens).clone(), posenc: grid_posenc(h, w, d), height: h, width: w })
    }
}

/// Query projection output: an `height × width × d` grid aligned with the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatureMap {
    pub features: Tensor,
    pub height: usize,
    pub width: usize,
}

impl QueryFeatureMap {
    pub fn project(patch: &RasterPatch, stem: &ConvStem, store: &ParamStore) -> Result<Self> {
        let mut g = Graph::new();
        let input = g.constant(patch_input(patch));
        let (f, h, w) = stem.forward(&mut g, store, input, patch.height(), patch.width())?;
        Ok(Self { features: g.value(f).clone(), height: h, width: w })
    }

    /// Bilinear lookup at a normalized location.
    pub fn sample(&self, p: GeoPoint) -> Vec<f64> {
        let mut g = Graph::new();
        let f = g.constant(self.features.clone());
        let (x, y) = grid_coords(p, self.height, self.width);
        let pt = g.constant(Tensor::new(1, 2, vec![x, y]).expect("shape"));
        let out = g.bilinear(f, pt, self.height, self.width).expect("shape");
        g.value(out).data().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::check_params;
    use crate::geo::BBox;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn zero_image_gives_zero_tokens() {
        let mut store = ParamStore::new();
        let stem = ConvStem::new(&mut store, "tok", 3, &StemSpec::patchify(8, 8, 16).unwrap(), &mut rng());
        let patch = RasterPatch::filled(32, 32, [0, 0, 0], BBox::unit());
        let t = TokenGrid::project(&patch, &stem, &store).unwrap();
        assert_eq!(t.tokens.shape(), (16, 16));
        assert!(t.tokens.data().iter().all(|v| *v == 0.0));
        let q = QueryFeatureMap::project(&patch, &stem, &store).unwrap();
        assert!(q.features.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_shapes_follow_stride() {
        let mut store = ParamStore::new();
        let spec = StemSpec::patchify(8, 12, 32).unwrap();
        assert_eq!(spec.total_stride(), 8);
        let stem = ConvStem::new(&mut store, "tok", 3, &spec, &mut rng());
        let patch = RasterPatch::filled(128, 128, [40, 90, 200], BBox::unit());
        let t = TokenGrid::project(&patch, &stem, &store).unwrap();
        assert_eq!((t.height, t.width), (16, 16));
        assert_eq!(t.tokens.shape(), (256, 32));
        assert_eq!(t.posenc.shape(), (256, 32));
        let qspec = StemSpec::patchify(4, 12, 32).unwrap();
        let qstem = ConvStem::new(&mut store, "query", 3, &qspec, &mut rng());
        let q = QueryFeatureMap::project(&patch, &qstem, &store).unwrap();
        assert_eq!((q.height, q.width, q.features.cols()), (32, 32, 32));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let mut store = ParamStore::new();
        let stem = ConvStem::new(&mut store, "tok", 3, &StemSpec::patchify(8, 4, 8).unwrap(), &mut rng());
        let patch = RasterPatch::filled(30, 32, [0, 0, 0], BBox::unit());
        assert!(matches!(TokenGrid::project(&patch, &stem, &store), Err(Error::Shape(_))));
    }

    #[test]
    fn stem_gradients_match_finite_differences() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let stem = ConvStem::new(&mut store, "tok", 3, &StemSpec::patchify(4, 3, 4).unwrap(), &mut r);
        let input: Vec<f64> = (0..8 * 8 * 3).map(|_| r.gen::<f64>()).collect();
        let input = Tensor::new(64, 3, input).unwrap();
        let target = Tensor::new(4, 4, (0..16).map(|_| r.gen::<f64>()).collect()).unwrap();
        let worst = check_params(&mut store, 40, |s, g| {
            let x = g.constant(input.clone());
            let (y, _, _) = stem.forward(g, s, x, 8, 8).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(y, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.sum_all(sq)
        });
        assert!(worst < 1e-4, "worst {worst}");
    }

    #[test]
    fn posenc_is_bounded_and_distinct() {
        let a = posenc_2d(GeoPoint::new(0.1, 0.2), 16);
        let b = posenc_2d(GeoPoint::new(0.2, 0.1), 16);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn grid_coords_invert_cell_centers() {
        let c = cell_center(3, 5, 8, 10);
        let (x, y) = grid_coords(c, 8, 10);
        assert!((x - 5.0).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
    }
}
