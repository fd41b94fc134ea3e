//! Planar geometry on 64-bit floats: points, polygons, containment, areas,
//! intersection-over-union, convex hulls and geo/pixel transforms.
//!
//! Inside the model pipeline every coordinate is normalized to the patch
//! bounding box (`[0, 1]²`, `y` pointing north). Geographic degrees only
//! appear at the I/O boundary, see [`BBox::normalize`] and
//! [`BBox::denormalize`].

mod clip;
pub mod geojson;
mod hull;
mod transform;

pub use clip::{region_area, region_intersection_area};
pub use hull::convex_hull;
pub use transform::GeoPixelTransform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for geometric predicates (on-boundary tests, collinearity).
pub const EPS: f64 = 1e-9;

/// IoU above which a prediction counts as "high-IoU".
pub const HIGH_IOU_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, o: GeoPoint) -> GeoPoint {
        GeoPoint::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: GeoPoint) -> GeoPoint {
        GeoPoint::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> GeoPoint {
        GeoPoint::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: GeoPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2-D cross product.
    pub fn cross(self, o: GeoPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: GeoPoint) -> f64 {
        self.sub(o).norm()
    }

    pub fn lerp(self, o: GeoPoint, t: f64) -> GeoPoint {
        GeoPoint::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

/// Distance from `q` to the closed segment `[a, b]`.
pub fn point_segment_distance(q: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return q.dist(a);
    }
    let t = (q.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    q.dist(a.lerp(b, t))
}

/// A closed ring of vertices, stored without repeating the first vertex and
/// canonicalized to counter-clockwise orientation.
///
/// Construction only checks the vertex count and finiteness. Zero-area rings
/// are representable (a regression head may emit them); operations that need
/// a proper area report [`Error::Degenerate`]. Use [`Polygon::new_simple`] for
/// ground-truth shapes, which must not self-intersect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<GeoPoint>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::Degenerate(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite vertex {p:?}")));
        }
        if shoelace(&vertices) < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Like [`Polygon::new`] but also rejects self-intersecting and zero-area rings.
    pub fn new_simple(vertices: Vec<GeoPoint>) -> Result<Self> {
        let p = Self::new(vertices)?;
        if p.signed_area() <= EPS * EPS {
            return Err(Error::Degenerate("polygon has zero area".into()));
        }
        if !p.is_simple() {
            return Err(Error::InvalidGeometry("polygon is self-intersecting".into()));
        }
        Ok(p)
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area with sign (non-negative after canonicalization).
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn centroid(&self) -> GeoPoint {
        let a = self.signed_area();
        if a.abs() <= EPS * EPS {
            let n = self.vertices.len() as f64;
            let s = self.vertices.iter().fold(GeoPoint::default(), |acc, p| acc.add(*p));
            return s.scale(1.0 / n);
        }
        let o = self.vertices[0];
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let (p, q) = (p.sub(o), q.sub(o));
            let c = p.cross(q);
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        GeoPoint::new(o.x + cx / (6.0 * a), o.y + cy / (6.0 * a))
    }

    pub fn bbox(&self) -> BBox {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for p in &self.vertices[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn reversed(&self) -> Polygon {
        let mut v = self.vertices.clone();
        v.reverse();
        Polygon { vertices: v }
    }

    pub fn translated(&self, d: GeoPoint) -> Polygon {
        Polygon { vertices: self.vertices.iter().map(|p| p.add(d)).collect() }
    }

    /// Uniform scaling about `center`; orientation is preserved for `s > 0`.
    pub fn scaled_about(&self, center: GeoPoint, s: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|p| center.add(p.sub(center).scale(s))).collect(),
        }
    }

    /// True when no two non-adjacent edges touch and adjacent edges only share
    /// their common vertex.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let v = &self.vertices;
        for i in 0..n {
            let (a0, a1) = (v[i], v[(i + 1) % n]);
            for j in (i + 1)..n {
                let (b0, b1) = (v[j], v[(j + 1) % n]);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges must not fold back onto each other.
                    let shared = if j == i + 1 { a1 } else { a0 };
                    let (p, q) = if j == i + 1 { (a0, b1) } else { (a1, b0) };
                    let d1 = p.sub(shared);
                    let d2 = q.sub(shared);
                    if d1.cross(d2).abs() <= EPS * d1.norm() * d2.norm() && d1.dot(d2) > 0.0 {
                        return false;
                    }
                    continue;
                }
                if segments_touch(a0, a1, b0, b1) {
                    return false;
                }
            }
        }
        true
    }
}

fn shoelace(v: &[GeoPoint]) -> f64 {
    let n = v.len();
    let o = v[0];
    let mut s = 0.0;
    for i in 0..n {
        let p = v[i].sub(o);
        let q = v[(i + 1) % n].sub(o);
        s += p.cross(q);
    }
    0.5 * s
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    b.sub(a).cross(c.sub(a))
}

/// Closed-segment intersection test with tolerance [`EPS`].
pub fn segments_touch(a0: GeoPoint, a1: GeoPoint, b0: GeoPoint, b1: GeoPoint) -> bool {
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    let tol_b = EPS * b1.dist(b0).max(EPS);
    let tol_a = EPS * a1.dist(a0).max(EPS);
    if ((d1 > tol_b && d2 < -tol_b) || (d1 < -tol_b && d2 > tol_b))
        && ((d3 > tol_a && d4 < -tol_a) || (d3 < -tol_a && d4 > tol_a))
    {
        return true;
    }
    point_segment_distance(a0, b0, b1) <= EPS
        || point_segment_distance(a1, b0, b1) <= EPS
        || point_segment_distance(b0, a0, a1) <= EPS
        || point_segment_distance(b1, a0, a1) <= EPS
}

/// Axis-aligned box; `min < max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || !(min.x < max.x && min.y < max.y) {
            return Err(Error::Degenerate(format!("bbox {min:?}..{max:?} has zero or negative extent")));
        }
        Ok(Self { min, max })
    }

    /// The unit square `[0, 1]²`, the normalized patch frame.
    pub const fn unit() -> Self {
        Self { min: GeoPoint::new(0.0, 0.0), max: GeoPoint::new(1.0, 1.0) }
    }

    pub fn centered(center: GeoPoint, width: f64, height: f64) -> Result<Self> {
        Self::new(
            GeoPoint::new(center.x - width / 2.0, center.y - height / 2.0),
            GeoPoint::new(center.x + width / 2.0, center.y + height / 2.0),
        )
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> GeoPoint {
        self.min.lerp(self.max, 0.5)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.x >= self.min.x - EPS
            && p.x <= self.max.x + EPS
            && p.y >= self.min.y - EPS
            && p.y <= self.max.y + EPS
    }

    /// Map a point of this box into the unit square.
    pub fn normalize(&self, p: GeoPoint) -> GeoPoint {
        GeoPoint::new((p.x - self.min.x) / self.width(), (p.y - self.min.y) / self.height())
    }

    /// Inverse of [`BBox::normalize`].
    pub fn denormalize(&self, p: GeoPoint) -> GeoPoint {
        GeoPoint::new(self.min.x + p.x * self.width(), self.min.y + p.y * self.height())
    }

    pub fn corners(&self) -> [GeoPoint; 4] {
        [
            self.min,
            GeoPoint::new(self.max.x, self.min.y),
            self.max,
            GeoPoint::new(self.min.x, self.max.y),
        ]
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon { vertices: self.corners().to_vec() }
    }
}

/// The twenty merged POI/AOI category codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Category(u8);

impl Category {
    pub const COUNT: usize = 20;

    pub const INDUSTRIAL_PARK: Category = Category(8);
    pub const PARKING_LOT: Category = Category(9);
    pub const OFFICE_BUILDING: Category = Category(12);
    pub const SCHOOL: Category = Category(13);
    pub const RESIDENTIAL: Category = Category(14);

    const NAMES: [&'static str; 20] = [
        "Exhibition hall, cultural center",
        "Hospital",
        "Natural scenic spots, gardens",
        "Gas/other energy station",
        "Government agencies, civil society organization",
        "Kindergarten",
        "Star hotel",
        "Leisure and entertainment place",
        "Industrial Park",
        "Car service area, parking lot",
        "University, vocational technical school",
        "City square, park square",
        "Office building, industrial building",
        "Primary and secondary school",
        "Residential area",
        "Train station, airport",
        "Shopping mall",
        "Factory",
        "Company",
        "Other",
    ];

    pub fn new(code: u8) -> Result<Self> {
        if (code as usize) < Self::COUNT {
            Ok(Self(code))
        } else {
            Err(Error::InvalidCategory(code))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = Category> {
        (0..Self::COUNT as u8).map(Category)
    }
}

impl TryFrom<u8> for Category {
    type Error = Error;
    fn try_from(code: u8) -> Result<Self> {
        Category::new(code)
    }
}

impl From<Category> for u8 {
    fn from(c: Category) -> u8 {
        c.0
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiKind {
    Core,
    Entrance,
    Generic,
}

impl PoiKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoiKind::Core => "core",
            PoiKind::Entrance => "entrance",
            PoiKind::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: u64,
    pub location: GeoPoint,
    pub category: Category,
    pub kind: PoiKind,
    pub parent_id: Option<u64>,
}

/// Road centerlines as a node list plus index-pair segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadNetwork {
    nodes: Vec<GeoPoint>,
    segments: Vec<(usize, usize)>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<GeoPoint>, segments: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &segments {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::InvalidGeometry(format!(
                    "segment ({a}, {b}) references a missing node ({} nodes)",
                    nodes.len()
                )));
            }
            if nodes[a].dist(nodes[b]) <= EPS {
                return Err(Error::InvalidGeometry(format!("segment ({a}, {b}) has zero length")));
            }
        }
        if let Some(p) = nodes.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite road node {p:?}")));
        }
        Ok(Self { nodes, segments })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[GeoPoint] {
        &self.nodes
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_points(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        self.segments.iter().map(|&(a, b)| (self.nodes[a], self.nodes[b]))
    }

    /// Apply a point map to every node (e.g. geo degrees to normalized units).
    pub fn map_points(&self, f: impl Fn(GeoPoint) -> GeoPoint) -> RoadNetwork {
        RoadNetwork { nodes: self.nodes.iter().map(|p| f(*p)).collect(), segments: self.segments.clone() }
    }
}

/// Shoelace area of a polygon (orientation independent).
pub fn polygon_area(p: &Polygon) -> Result<f64> {
    let mut distinct: Vec<GeoPoint> = Vec::with_capacity(p.len());
    for v in p.vertices() {
        if !distinct.iter().any(|d| d.dist(*v) <= EPS) {
            distinct.push(*v);
        }
        if distinct.len() >= 3 {
            break;
        }
    }
    if distinct.len() < 3 {
        return Err(Error::Degenerate("polygon has fewer than 3 distinct vertices".into()));
    }
    Ok(p.signed_area().abs())
}

/// Even-odd containment; points within [`EPS`] of the boundary count as inside.
pub fn point_in_polygon(q: GeoPoint, p: &Polygon) -> bool {
    if p.edges().any(|(a, b)| point_segment_distance(q, a, b) <= EPS) {
        return true;
    }
    crossing_parity(q, p.vertices())
}

/// Strict even-odd ray-crossing test (no boundary tolerance).
pub(crate) fn crossing_parity(q: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Intersection over union of the even-odd regions of two rings.
///
/// The intersection area is computed by clipping each boundary against the
/// other region (see [`region_intersection_area`]); neither input has to be
/// convex, and self-intersecting predictions are handled as even-odd regions.
pub fn polygon_iou(a: &Polygon, b: &Polygon) -> Result<f64> {
    let area_a = region_area(a.vertices());
    let area_b = region_area(b.vertices());
    let tiny = EPS * EPS;
    if area_a <= tiny || area_b <= tiny {
        return Err(Error::Degenerate("IoU of a zero-area polygon is undefined".into()));
    }
    let inter = region_intersection_area(a.vertices(), b.vertices()).clamp(0.0, area_a.min(area_b));
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouSummary {
    pub miou: f64,
    pub high_iou_rate: f64,
    pub count: usize,
}

impl IouSummary {
    /// Aggregate precomputed per-sample IoUs.
    pub fn from_ious(ious: &[f64]) -> Result<Self> {
        if ious.is_empty() {
            return Err(Error::Empty("mean IoU over zero pairs".into()));
        }
        let n = ious.len() as f64;
        Ok(Self {
            miou: ious.iter().sum::<f64>() / n,
            high_iou_rate: ious.iter().filter(|&&v| v > HIGH_IOU_THRESHOLD).count() as f64 / n,
            count: ious.len(),
        })
    }
}

/// Mean IoU and high-IoU rate (IoU > 0.75) over prediction/truth pairs.
pub fn mean_iou(pairs: &[(Polygon, Polygon)]) -> Result<IouSummary> {
    let ious = pairs.iter().map(|(a, b)| polygon_iou(a, b)).collect::<Result<Vec<_>>>()?;
    IouSummary::from_ious(&ious)
}
