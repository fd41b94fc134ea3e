//! Reliability features of a candidate polygon.

use std::fmt::Write as _;

use super::{LbsPoint, LogisticsRecord};
use crate::error::{Error, Result};
use crate::geo::{convex_hull, point_in_polygon, polygon_area, polygon_iou, BBox, Category, Poi, PoiKind, Polygon};
use crate::synthgen::{local_weekday_hour, GeoSample};

/// Share of the core POI's child locations inside `p`.
///
/// The pool is the multiset union of the entrances and the logistics
/// records; a record counts at the location of the entrance it resolved to
/// (its own location when the id is not an entrance), so frequently used
/// entrances weigh more.
pub fn feature_partial(entrances: &[Poi], logistics: &[LogisticsRecord], p: &Polygon) -> Result<f64> {
    let total = entrances.len() + logistics.len();
    if total == 0 {
        return Err(Error::Empty("no entrances or logistics records".into()));
    }
    let inside_entrances = entrances.iter().filter(|e| point_in_polygon(e.location, p)).count();
    let inside_records = logistics
        .iter()
        .filter(|r| {
            let at = entrances.iter().find(|e| e.id == r.poi_id).map_or(r.location, |e| e.location);
            point_in_polygon(at, p)
        })
        .count();
    Ok((inside_entrances + inside_records) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFeature {
    pub value: f64,
    /// Fewer than three non-collinear entrances: no hull, value 0.
    pub degenerate: bool,
}

/// IoU of the entrances' convex hull with `p`.
pub fn feature_beta(entrances: &[Poi], p: &Polygon) -> BetaFeature {
    let pts: Vec<_> = entrances.iter().map(|e| e.location).collect();
    match convex_hull(&pts).and_then(|hull| polygon_iou(&hull, p)) {
        Ok(value) => BetaFeature { value, degenerate: false },
        Err(_) => BetaFeature { value: 0.0, degenerate: true },
    }
}

/// Number of core POIs of `category` inside `p`.
pub fn feature_delta(cores: &[Poi], category: Category, p: &Polygon) -> usize {
    cores
        .iter()
        .filter(|c| c.kind == PoiKind::Core && c.category == category && point_in_polygon(c.location, p))
        .count()
}

/// 7×24 share of inside-polygon LBS points per local (weekday, hour).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowHistogram {
    /// `bins[weekday][hour]`, Monday first; sums to 1 unless `empty`.
    pub bins: [[f64; 24]; 7],
    pub inside: usize,
    pub empty: bool,
}

pub fn flow_histogram(points: &[LbsPoint], p: &Polygon, tz_offset_hours: i32) -> FlowHistogram {
    let mut bins = [[0.0; 24]; 7];
    let mut inside = 0;
    for pt in points.iter().filter(|pt| point_in_polygon(pt.location, p)) {
        let (w, h) = local_weekday_hour(pt.timestamp, tz_offset_hours);
        bins[w][h] += 1.0;
        inside += 1;
    }
    if inside > 0 {
        bins.iter_mut().flatten().for_each(|v| *v /= inside as f64);
    }
    FlowHistogram { bins, inside, empty: inside == 0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicFeatures {
    pub category: Category,
    /// Polygon area over the extent's area.
    pub area: f64,
    /// Direction from the polygon centroid to the core POI, radians
    /// counter-clockwise from east.
    pub bearing: f64,
    /// Centroid-to-core distance over `sqrt(polygon area)`.
    pub offset: f64,
}

pub fn basic_features(category: Category, core: crate::geo::GeoPoint, p: &Polygon, extent: &BBox) -> Result<BasicFeatures> {
    let area = polygon_area(p)?;
    if area <= crate::geo::EPS {
        return Err(Error::Degenerate("candidate polygon has zero area".into()));
    }
    let d = core.sub(p.centroid());
    let bearing = if d.norm() > 0.0 { d.y.atan2(d.x) } else { 0.0 };
    Ok(BasicFeatures { category, area: area / extent.area(), bearing, offset: d.norm() / area.sqrt() })
}

/// Full feature vector of one candidate polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityFeatures {
    pub basic: BasicFeatures,
    pub partial: f64,
    pub beta: BetaFeature,
    pub delta: usize,
    pub flow: FlowHistogram,
    /// Decoder category-token output for the sample.
    pub embedding: Vec<f64>,
}

impl ReliabilityFeatures {
    /// Column names matching [`ReliabilityFeatures::to_vec`].
    pub fn columns(embedding_dim: usize) -> Vec<String> {
        let mut c: Vec<String> = (0..Category::COUNT).map(|i| format!("cat_{i}")).collect();
        c.extend(["area", "bearing_cos", "bearing_sin", "offset", "partial", "beta", "beta_degenerate", "delta", "flow_empty"].map(String::from));
        for w in 0..7 {
            c.extend((0..24).map(|h| format!("flow_{w}_{h:02}")));
        }
        c.extend((0..embedding_dim).map(|i| format!("emb_{i}")));
        c
    }

    /// Numeric vector: category one-hot, basic features (bearing as its
    /// cosine and sine), POI features, flags, flow histogram, embedding.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; Category::COUNT];
        v[self.basic.category.index()] = 1.0;
        v.extend([
            self.basic.area,
            self.basic.bearing.cos(),
            self.basic.bearing.sin(),
            self.basic.offset,
            self.partial,
            self.beta.value,
            f64::from(u8::from(self.beta.degenerate)),
            self.delta as f64,
            f64::from(u8::from(self.flow.empty)),
        ]);
        v.extend(self.flow.bins.iter().flatten());
        v.extend(&self.embedding);
        v
    }
}

/// Features of `candidate` judged against the observations in `sample`.
/// Areas and offsets are measured in the sample's normalized patch frame.
pub fn extract_features(
    sample: &GeoSample,
    candidate: &Polygon,
    embedding: Vec<f64>,
    tz_offset_hours: i32,
) -> Result<ReliabilityFeatures> {
    let norm = |p: &Polygon| Polygon::new(p.vertices().iter().map(|v| sample.bbox.normalize(*v)).collect());
    let basic = basic_features(
        sample.core.category,
        sample.bbox.normalize(sample.core.location),
        &norm(candidate)?,
        &BBox::unit(),
    )?;
    let mut cores = vec![sample.core.clone()];
    cores.extend(sample.neighbors.iter().map(|n| n.core.clone()));
    Ok(ReliabilityFeatures {
        basic,
        partial: feature_partial(&sample.entrances, &sample.logistics, candidate)?,
        beta: feature_beta(&sample.entrances, candidate),
        delta: feature_delta(&cores, sample.core.category, candidate),
        flow: flow_histogram(&sample.lbs, candidate, tz_offset_hours),
        embedding,
    })
}

/// Feature matrix as CSV: `sample_id,label,<columns>`.
pub fn features_csv(ids: &[u64], labels: &[bool], rows: &[ReliabilityFeatures]) -> Result<String> {
    if ids.len() != rows.len() || labels.len() != rows.len() {
        return Err(Error::Shape(format!("{} ids, {} labels, {} rows", ids.len(), labels.len(), rows.len())));
    }
    let dim = rows.first().map_or(0, |r| r.embedding.len());
    let mut out = format!("sample_id,label,{}\n", ReliabilityFeatures::columns(dim).join(","));
    for ((id, label), row) in ids.iter().zip(labels).zip(rows) {
        let _ = write!(out, "{id},{}", u8::from(*label));
        for v in row.to_vec() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}
