//! Seeded synthetic worlds with known ground truth.
//!
//! Every sample is an independent scene centered on its core POI: an AOI
//! outline whose style depends on the category, an axis-aligned road grid
//! whose block around the AOI sits at a random setback (with random gaps),
//! neighbouring AOIs in the other blocks, entrances on the AOI fence,
//! logistics records at the entrances, and an LBS trace following the
//! category's weekly activity profile.

mod dataset;
mod lbs;
mod render;
mod shapes;

pub use lbs::{hourly_profile, local_weekday_hour, sample_lbs, weekday_profile, WEEK_START};
pub use dataset::{read_sample, sample_dir, sample_features, sample_from_features, Dataset, Manifest, Splits, MANIFEST};
pub use render::render_scene;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    point_in_polygon, point_segment_distance, polygon_iou, BBox, Category, GeoPoint, Poi, PoiKind, Polygon,
    RoadNetwork,
};
use crate::imagery::{RasterPatch, CROP_WINDOW_DEG};
use crate::model::{Example, ModelInput};
use crate::sampling::{assemble_refs, sample_boundary, sample_road_refs};
use crate::reliability::{LbsPoint, LogisticsRecord, Provenance, ReliabilityLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    /// Total number of samples (training plus validation).
    pub samples: usize,
    /// Share of samples held out for validation (the last ones).
    pub val_fraction: f64,
    /// Category codes, mixed in equal proportions.
    pub categories: Vec<u8>,
    pub vertex_range: (usize, usize),
    /// Amplitude of the radial outline perturbation, relative to the radius.
    pub irregularity: f64,
    /// Range of the mean AOI radius in patch units, before the per-category scale.
    pub size_range: (f64, f64),
    /// Share of U-shaped outlines that are not star-shaped about the core.
    pub non_star_fraction: f64,
    /// Spacing range between parallel roads outside the AOI block.
    pub road_spacing: (f64, f64),
    /// Range of the gap between the AOI's bounding box and its block roads.
    pub setback_range: (f64, f64),
    /// Probability that a road piece between two junctions is missing.
    pub road_gap_prob: f64,
    /// Probability that a neighbouring block holds another AOI.
    pub neighbor_prob: f64,
    pub entrance_range: (usize, usize),
    pub image_size: usize,
    pub window_deg: f64,
    pub road_half_width_px: f64,
    /// Scales the difference between category fill colors and the background.
    pub contrast: f64,
    pub pixel_noise: u8,
    pub lbs_points: usize,
    /// Share of LBS points placed outside the AOI.
    pub lbs_leakage: f64,
    pub logistics_records: usize,
    /// Radius (patch units) of the geocoding scatter around an entrance.
    pub logistics_jitter: f64,
    /// Share of samples whose candidate polygon is a negative.
    pub negative_fraction: f64,
    pub tz_offset_hours: i32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: 2400,
            val_fraction: 1.0 / 6.0,
            categories: vec![14, 13, 8, 9],
            vertex_range: (10, 20),
            irregularity: 0.12,
            size_range: (0.12, 0.22),
            non_star_fraction: 0.05,
            road_spacing: (0.18, 0.32),
            setback_range: (0.02, 0.12),
            road_gap_prob: 0.15,
            neighbor_prob: 0.6,
            entrance_range: (2, 4),
            image_size: 128,
            window_deg: CROP_WINDOW_DEG,
            road_half_width_px: 1.0,
            contrast: 1.0,
            pixel_noise: 12,
            lbs_points: 200,
            lbs_leakage: 0.1,
            logistics_records: 30,
            logistics_jitter: 0.004,
            negative_fraction: 0.5,
            tz_offset_hours: 8,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        check(!self.categories.is_empty(), || "no categories".into())?;
        for &c in &self.categories {
            Category::new(c)?;
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        check(unit(self.val_fraction) && unit(self.non_star_fraction), || "fractions must lie in [0, 1]".into())?;
        check(unit(self.road_gap_prob) && unit(self.neighbor_prob), || "probabilities must lie in [0, 1]".into())?;
        check(unit(self.lbs_leakage) && unit(self.negative_fraction), || "fractions must lie in [0, 1]".into())?;
        check(self.vertex_range.0 >= 4 && self.vertex_range.0 <= self.vertex_range.1, || {
            format!("vertex range {:?} must satisfy 4 ≤ min ≤ max", self.vertex_range)
        })?;
        check(self.entrance_range.0 >= 1 && self.entrance_range.0 <= self.entrance_range.1, || {
            format!("entrance range {:?} must satisfy 1 ≤ min ≤ max", self.entrance_range)
        })?;
        let (lo, hi) = self.size_range;
        check(lo > 0.0 && lo <= hi, || format!("size range {:?}", self.size_range))?;
        // the largest style scale is 1.2; the outline must fit the patch around the center
        check(hi * 1.2 * 2f64.sqrt() < 0.45, || format!("size range {:?} cannot fit inside the patch", self.size_range))?;
        check(self.setback_range.0 > 0.0 && self.setback_range.0 <= self.setback_range.1, || {
            format!("setback range {:?}", self.setback_range)
        })?;
        check(self.road_spacing.0 >= 0.05 && self.road_spacing.0 <= self.road_spacing.1, || {
            format!("road spacing {:?}", self.road_spacing)
        })?;
        check(self.irregularity >= 0.0 && self.irregularity < 0.5, || "irregularity must lie in [0, 0.5)".into())?;
        check(self.image_size >= 8, || "image size must be at least 8 px".into())?;
        check(self.window_deg > 0.0, || "window must be positive".into())?;
        check(self.lbs_points > 0 && self.logistics_records > 0, || "LBS and logistics counts must be positive".into())?;
        Ok(())
    }

    /// `(train, val)` sample counts.
    pub fn split(&self) -> (usize, usize) {
        let val = (self.samples as f64 * self.val_fraction).round() as usize;
        (self.samples - val.min(self.samples), val.min(self.samples))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborAoi {
    pub core: Poi,
    pub polygon: Polygon,
}

/// One AOI with everything observed about it. Coordinates are degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoSample {
    pub id: u64,
    pub core: Poi,
    /// Current ground-truth AOI.
    pub aoi: Polygon,
    /// Polygon whose reliability is judged (equal to `aoi` for positives).
    pub candidate: Polygon,
    pub label: ReliabilityLabel,
    pub bbox: BBox,
    pub patch: RasterPatch,
    pub roads: RoadNetwork,
    pub entrances: Vec<Poi>,
    pub neighbors: Vec<NeighborAoi>,
    pub lbs: Vec<LbsPoint>,
    pub logistics: Vec<LogisticsRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// The candidate is an outdated, smaller outline of the AOI: the fence,
    /// entrances and activity have since moved outward.
    Expired,
    /// The candidate is the truth displaced until IoU < 0.75.
    LowIou,
}

/// Uniform point inside a polygon (rejection sampling in its bbox).
pub(crate) fn random_point_in(p: &Polygon, rng: &mut impl Rng) -> GeoPoint {
    let b = p.bbox();
    loop {
        let q = GeoPoint::new(rng.gen_range(b.min.x..=b.max.x), rng.gen_range(b.min.y..=b.max.y));
        if point_in_polygon(q, p) {
            return q;
        }
    }
}

/// Point at arc-length fraction `f ∈ [0, 1)` along the polygon boundary.
fn point_on_boundary(p: &Polygon, f: f64) -> GeoPoint {
    let lengths: Vec<f64> = p.edges().map(|(a, b)| a.dist(b)).collect();
    let mut target = f * lengths.iter().sum::<f64>();
    for ((a, b), len) in p.edges().zip(&lengths) {
        if target <= *len {
            return a.lerp(b, target / len);
        }
        target -= len;
    }
    p.vertices()[0]
}

fn boundary_distance(q: GeoPoint, p: &Polygon) -> f64 {
    p.edges().map(|(a, b)| point_segment_distance(q, a, b)).fold(f64::INFINITY, f64::min)
}

/// Scene geometry in normalized patch units, core at the center.
struct Scene {
    category: Category,
    aoi: Polygon,
    roads: RoadNetwork,
    entrances: Vec<GeoPoint>,
    neighbors: Vec<(Category, GeoPoint, Polygon)>,
}

const CENTER: GeoPoint = GeoPoint::new(0.5, 0.5);
const PATCH_MARGIN: f64 = 0.03;

fn aoi_outline(cfg: &WorldConfig, category: Category, rng: &mut impl Rng) -> Result<Polygon> {
    let style = shapes::style(category);
    for _ in 0..200 {
        let radius = rng.gen_range(cfg.size_range.0..=cfg.size_range.1) * style.size;
        let (ring, anchor) = if rng.gen::<f64>() < cfg.non_star_fraction {
            shapes::notched_outline(rng, radius)
        } else {
            let v = rng.gen_range(cfg.vertex_range.0..=cfg.vertex_range.1);
            let ring = shapes::star_outline(rng, style, radius, v, cfg.irregularity);
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let off = rng.gen_range(0.0..0.3) * radius / style.aspect.1.sqrt();
            (ring, GeoPoint::new(off * dir.cos(), off * dir.sin()))
        };
        let ring: Vec<GeoPoint> = ring.into_iter().map(|p| p.sub(anchor).add(CENTER)).collect();
        let Ok(poly) = Polygon::new(ring) else { continue };
        let b = poly.bbox();
        if b.min.x < PATCH_MARGIN || b.min.y < PATCH_MARGIN || b.max.x > 1.0 - PATCH_MARGIN || b.max.y > 1.0 - PATCH_MARGIN {
            continue;
        }
        if !poly.is_simple() || !point_in_polygon(CENTER, &poly) || boundary_distance(CENTER, &poly) < 0.015 {
            continue;
        }
        return Ok(poly);
    }
    Err(Error::Config("could not place an AOI outline inside the patch; reduce size_range".into()))
}

/// Lines at `start`, `start ± spacing`, … strictly inside (0, 1).
fn road_lines(first: f64, dir: f64, cfg: &WorldConfig, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = first;
    while x > 0.01 && x < 0.99 {
        out.push(x);
        x += dir * rng.gen_range(cfg.road_spacing.0..=cfg.road_spacing.1);
    }
    out
}

/// Axis-aligned grid of roads around the AOI; returns the network and the
/// vertical/horizontal line coordinates.
fn road_grid(aoi: &Polygon, cfg: &WorldConfig, rng: &mut impl Rng) -> Result<(RoadNetwork, Vec<f64>, Vec<f64>)> {
    let b = aoi.bbox();
    let mut setback = || rng.gen_range(cfg.setback_range.0..=cfg.setback_range.1);
    let (l, r, d, u) = (b.min.x - setback(), b.max.x + setback(), b.min.y - setback(), b.max.y + setback());
    let mut xs = road_lines(l, -1.0, cfg, rng);
    xs.extend(road_lines(r, 1.0, cfg, rng));
    let mut ys = road_lines(d, -1.0, cfg, rng);
    ys.extend(road_lines(u, 1.0, cfg, rng));
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);

    let mut nodes: Vec<GeoPoint> = Vec::new();
    let node = |p: GeoPoint, nodes: &mut Vec<GeoPoint>| match nodes.iter().position(|q| *q == p) {
        Some(i) => i,
        None => {
            nodes.push(p);
            nodes.len() - 1
        }
    };
    let mut segments = Vec::new();
    let stops = |cross: &[f64]| {
        let mut s = vec![0.0];
        s.extend_from_slice(cross);
        s.push(1.0);
        s
    };
    for &x in &xs {
        for w in stops(&ys).windows(2) {
            if rng.gen::<f64>() >= cfg.road_gap_prob {
                let a = node(GeoPoint::new(x, w[0]), &mut nodes);
                let c = node(GeoPoint::new(x, w[1]), &mut nodes);
                segments.push((a, c));
            }
        }
    }
    for &y in &ys {
        for w in stops(&xs).windows(2) {
            if rng.gen::<f64>() >= cfg.road_gap_prob {
                let a = node(GeoPoint::new(w[0], y), &mut nodes);
                let c = node(GeoPoint::new(w[1], y), &mut nodes);
                segments.push((a, c));
            }
        }
    }
    Ok((RoadNetwork::new(nodes, segments)?, xs, ys))
}

fn neighbors(
    cfg: &WorldConfig,
    xs: &[f64],
    ys: &[f64],
    rng: &mut impl Rng,
) -> Vec<(Category, GeoPoint, Polygon)> {
    let bounds = |v: &[f64]| {
        let mut s = vec![0.0];
        s.extend_from_slice(v);
        s.push(1.0);
        s
    };
    let (bx, by) = (bounds(xs), bounds(ys));
    let margin = 0.025;
    let mut out = Vec::new();
    for cx in bx.windows(2) {
        for cy in by.windows(2) {
            let block = (cx[0], cy[0], cx[1], cy[1]);
            if block.0 < 0.5 && 0.5 < block.2 && block.1 < 0.5 && 0.5 < block.3 {
                continue; // the AOI's own block
            }
            let (w, h) = (block.2 - block.0 - 2.0 * margin, block.3 - block.1 - 2.0 * margin);
            if w < 0.06 || h < 0.06 || rng.gen::<f64>() >= cfg.neighbor_prob {
                continue;
            }
            let code = *cfg.categories.choose(rng).expect("validated non-empty");
            let category = Category::new(code).expect("validated");
            let v = rng.gen_range(cfg.vertex_range.0..=cfg.vertex_range.1);
            let ring = shapes::star_outline(rng, shapes::style(category), 1.0, v, cfg.irregularity);
            let Ok(unit) = Polygon::new(ring) else { continue };
            let ub = unit.bbox();
            let s = (w / ub.width()).min(h / ub.height()) * rng.gen_range(0.7..1.0);
            let center = GeoPoint::new((block.0 + block.2) / 2.0, (block.1 + block.3) / 2.0);
            let shift = center.sub(ub.center().scale(s));
            let ring: Vec<GeoPoint> = unit.vertices().iter().map(|p| p.scale(s).add(shift)).collect();
            let Ok(poly) = Polygon::new(ring) else { continue };
            out.push((category, shift, poly));
        }
    }
    out
}

fn scene(cfg: &WorldConfig, category: Category, rng: &mut impl Rng) -> Result<Scene> {
    let aoi = aoi_outline(cfg, category, rng)?;
    let (roads, xs, ys) = road_grid(&aoi, cfg, rng)?;
    let neighbors = neighbors(cfg, &xs, &ys, rng);
    let count = rng.gen_range(cfg.entrance_range.0..=cfg.entrance_range.1);
    let start = rng.gen::<f64>();
    let entrances = (0..count)
        .map(|j| {
            let f = start + (j as f64 + rng.gen_range(-0.3..0.3)) / count as f64;
            point_on_boundary(&aoi, f.rem_euclid(1.0))
        })
        .collect();
    Ok(Scene { category, aoi, roads, entrances, neighbors })
}

/// Geographic center of sample `id`'s patch (scenes laid out on a grid).
fn scene_origin(id: u64) -> GeoPoint {
    GeoPoint::new(116.2 + (id % 64) as f64 * 0.01, 39.7 + (id / 64) as f64 * 0.01)
}

fn sample_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generate one positive sample (candidate equals truth).
pub fn generate_sample(cfg: &WorldConfig, id: u64) -> Result<GeoSample> {
    let mut rng = sample_rng(cfg.seed, id);
    let category = Category::new(cfg.categories[id as usize % cfg.categories.len()])?;
    let sc = scene(cfg, category, &mut rng)?;
    let bbox = BBox::centered(scene_origin(id), cfg.window_deg, cfg.window_deg)?;
    let geo = |p: GeoPoint| bbox.denormalize(p);
    let geo_poly = |p: &Polygon| Polygon::new(p.vertices().iter().map(|v| geo(*v)).collect());
    let core_id = id * 100;
    let core = Poi { id: core_id, location: geo(CENTER), category: sc.category, kind: PoiKind::Core, parent_id: None };
    let aoi = geo_poly(&sc.aoi)?;
    let entrances: Vec<Poi> = sc
        .entrances
        .iter()
        .enumerate()
        .map(|(j, p)| Poi {
            id: core_id + 1 + j as u64,
            location: geo(*p),
            category: sc.category,
            kind: PoiKind::Entrance,
            parent_id: Some(core_id),
        })
        .collect();
    let neighbors = sc
        .neighbors
        .iter()
        .enumerate()
        .map(|(j, (cat, c, poly))| {
            Ok(NeighborAoi {
                core: Poi { id: core_id + 50 + j as u64, location: geo(*c), category: *cat, kind: PoiKind::Core, parent_id: None },
                polygon: geo_poly(poly)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let weights: Vec<f64> = entrances.iter().map(|_| rng.gen_range(0.5..2.0)).collect();
    let pick = rand::distributions::WeightedIndex::new(&weights).expect("positive weights");
    let jitter = cfg.logistics_jitter * cfg.window_deg;
    let logistics = (0..cfg.logistics_records)
        .map(|_| {
            use rand::distributions::Distribution;
            let e = &entrances[pick.sample(&mut rng)];
            let r = jitter * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            LogisticsRecord { poi_id: e.id, location: e.location.add(GeoPoint::new(r * a.cos(), r * a.sin())) }
        })
        .collect();

    let mut sample = GeoSample {
        id,
        core,
        candidate: aoi.clone(),
        aoi,
        label: ReliabilityLabel::positive(),
        bbox,
        patch: RasterPatch::filled(1, 1, [0, 0, 0], bbox),
        roads: sc.roads.map_points(geo),
        entrances,
        neighbors,
        lbs: Vec::new(),
        logistics,
    };
    sample.lbs = sample_lbs(&sample, cfg, &mut rng);
    sample.patch = render_scene(&sample, cfg);
    Ok(sample)
}

impl GeoSample {
    pub fn category(&self) -> Category {
        self.core.category
    }

    /// Model input with `n` reference slots, in normalized patch coordinates.
    /// Entrances beyond `n` are dropped in id order.
    pub fn model_input(&self, n: usize) -> Result<ModelInput> {
        let core = self.bbox.normalize(self.core.location);
        let roads = self.roads.map_points(|p| self.bbox.normalize(p));
        let unit = BBox::unit();
        let road_refs = sample_road_refs(&roads, core, n, &unit)?;
        let entrances: Vec<Poi> = self
            .entrances
            .iter()
            .take(n)
            .map(|e| Poi { location: self.bbox.normalize(e.location), ..e.clone() })
            .collect();
        let refs = assemble_refs(&road_refs, &entrances, core, &unit)?;
        Ok(ModelInput { patch: self.patch.clone(), core, category: self.core.category, refs: refs.points })
    }

    /// Ground-truth AOI in normalized patch coordinates.
    pub fn normalized_aoi(&self) -> Result<Polygon> {
        Polygon::new(self.aoi.vertices().iter().map(|p| self.bbox.normalize(*p)).collect())
    }

    /// Training example with `n` boundary nodes.
    pub fn to_example(&self, n: usize) -> Result<Example> {
        let input = self.model_input(n)?;
        let truth = self.normalized_aoi()?;
        let target = sample_boundary(&truth, input.core, n)?.points;
        Ok(Example { input, target, truth })
    }
}

/// Turn a positive sample into a negative one.
pub fn corrupt_sample(sample: &GeoSample, mode: CorruptionMode, rng: &mut impl Rng) -> Result<GeoSample> {
    let mut out = sample.clone();
    let core = sample.core.location;
    match mode {
        CorruptionMode::Expired => {
            let s = rng.gen_range(1.6..2.0);
            out.candidate = sample.aoi.scaled_about(core, 1.0 / s);
            out.label = ReliabilityLabel { reliable: false, provenance: Provenance::ExpiredNegative };
        }
        CorruptionMode::LowIou => {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let dir = GeoPoint::new(a.cos(), a.sin());
            let unit = 0.01 * sample.bbox.width();
            let mut k = 1.0;
            loop {
                let moved = sample.aoi.translated(dir.scale(k * unit));
                if polygon_iou(&moved, &sample.aoi)? < 0.75 {
                    out.candidate = moved;
                    break;
                }
                k += 1.0;
            }
            out.label = ReliabilityLabel { reliable: false, provenance: Provenance::LowIouNegative };
        }
    }
    Ok(out)
}

/// Generate `cfg.samples` samples; categories cycle through `cfg.categories`
/// and a seeded `negative_fraction` of the samples (half expired, half
/// low-IoU) carry a corrupted candidate. Per-sample random streams make the
/// output independent of the thread count.
pub fn generate_world(cfg: &WorldConfig) -> Result<Vec<GeoSample>> {
    cfg.validate()?;
    let mut samples =
        (0..cfg.samples as u64).into_par_iter().map(|id| generate_sample(cfg, id)).collect::<Result<Vec<_>>>()?;
    let mut rng = sample_rng(cfg.seed, u64::MAX);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let negatives = (samples.len() as f64 * cfg.negative_fraction).round() as usize;
    for (rank, &i) in order.iter().take(negatives).enumerate() {
        let mode = if rank < negatives / 2 { CorruptionMode::Expired } else { CorruptionMode::LowIou };
        samples[i] = corrupt_sample(&samples[i], mode, &mut rng)?;
    }
    Ok(samples)
}
