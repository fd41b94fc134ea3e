//! Equiangular node sampling about the core POI.
//!
//! Ray `k` of `n` leaves the center at angle `2πk/n` (counter-clockwise from
//! east). The same rays index ground-truth boundary nodes, road reference
//! points and the model's output slots, so slot `k` always refers to ray `k`.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geo::{point_in_polygon, point_segment_distance, BBox, GeoPoint, Poi, Polygon, RoadNetwork, EPS};

/// Unit direction of ray `k` out of `n`.
pub fn ray_direction(k: usize, n: usize) -> GeoPoint {
    let a = TAU * k as f64 / n as f64;
    GeoPoint::new(a.cos(), a.sin())
}

/// Distance along the ray to the crossing with segment `[a, b]`, if any.
fn ray_segment_hit(origin: GeoPoint, dir: GeoPoint, a: GeoPoint, b: GeoPoint) -> Option<f64> {
    let e = b.sub(a);
    let denom = dir.cross(e);
    if denom.abs() <= 1e-15 * e.norm() {
        return None;
    }
    let w = a.sub(origin);
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    let tol = EPS / e.norm();
    (t >= -EPS && u >= -tol && u <= 1.0 + tol).then_some(t.max(0.0))
}

/// Sorted distances at which the ray `origin + t·direction`, `t ≥ 0`, crosses
/// the polygon boundary. Hits through a shared vertex are reported once.
pub fn ray_polygon_hits(origin: GeoPoint, direction: GeoPoint, p: &Polygon) -> Vec<f64> {
    let mut hits: Vec<f64> =
        p.edges().filter_map(|(a, b)| ray_segment_hit(origin, direction, a, b)).collect();
    hits.sort_by(|a, b| a.total_cmp(b));
    hits.dedup_by(|a, b| (*a - *b).abs() <= EPS);
    hits
}

/// Boundary nodes of a polygon at the `n` equiangular rays from `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub center: GeoPoint,
    pub points: Vec<GeoPoint>,
}

impl BoundarySample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sample `n` boundary nodes along equiangular rays from `center`.
///
/// When a ray crosses the boundary several times (non-star shapes) the
/// farthest crossing is kept so the reconstructed fence encloses the AOI.
pub fn sample_boundary(p: &Polygon, center: GeoPoint, n: usize) -> Result<BoundarySample> {
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 sample rays, got {n}")));
    }
    let on_boundary = p.edges().any(|(a, b)| point_segment_distance(center, a, b) <= EPS);
    if on_boundary || !point_in_polygon(center, p) {
        return Err(Error::OutsidePolygon(format!("sampling center {center:?} is not strictly inside")));
    }
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let dir = ray_direction(k, n);
        let t = *ray_polygon_hits(center, dir, p)
            .last()
            .ok_or_else(|| Error::OutsidePolygon(format!("ray {k} from {center:?} never leaves the polygon")))?;
        points.push(center.add(dir.scale(t)));
    }
    Ok(BoundarySample { center, points })
}

/// Close an ordered node sequence into a polygon (counter-clockwise).
///
/// Collinear or repeated nodes yield a zero-area polygon, which is accepted
/// here (the L1 loss still applies) but rejected by IoU computations.
pub fn reconstruct_polygon(points: &[GeoPoint]) -> Result<Polygon> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 nodes, got {}", points.len())));
    }
    Polygon::new(points.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSource {
    Road,
    Entrance,
    Truncated,
}

/// Exactly `n` prior points, slot `k` associated with ray `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoints {
    pub points: Vec<GeoPoint>,
    pub sources: Vec<RefSource>,
}

impl ReferencePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, source: RefSource) -> usize {
        self.sources.iter().filter(|s| **s == source).count()
    }

    /// True when no ray found a road (every slot is a bbox-border fallback).
    pub fn all_truncated(&self) -> bool {
        self.sources.iter().all(|s| *s == RefSource::Truncated)
    }
}

/// Farthest crossing of a ray with the bbox border (the exit point).
fn bbox_exit(center: GeoPoint, dir: GeoPoint, bbox: &BBox) -> GeoPoint {
    let mut t = f64::INFINITY;
    if dir.x > 0.0 {
        t = t.min((bbox.max.x - center.x) / dir.x);
    } else if dir.x < 0.0 {
        t = t.min((bbox.min.x - center.x) / dir.x);
    }
    if dir.y > 0.0 {
        t = t.min((bbox.max.y - center.y) / dir.y);
    } else if dir.y < 0.0 {
        t = t.min((bbox.min.y - center.y) / dir.y);
    }
    let q = center.add(dir.scale(t.max(0.0)));
    GeoPoint::new(q.x.clamp(bbox.min.x, bbox.max.x), q.y.clamp(bbox.min.y, bbox.max.y))
}

/// Road reference points: along each equiangular ray, the nearest crossing
/// with a road segment inside `bbox`; rays without one fall back to the bbox
/// border and are tagged [`RefSource::Truncated`].
pub fn sample_road_refs(roads: &RoadNetwork, center: GeoPoint, n: usize, bbox: &BBox) -> Result<ReferencePoints> {
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 reference slots, got {n}")));
    }
    if !bbox.contains(center) {
        return Err(Error::OutsidePolygon(format!("center {center:?} lies outside the patch bbox")));
    }
    let mut points = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for k in 0..n {
        let dir = ray_direction(k, n);
        let nearest = roads
            .segment_points()
            .filter_map(|(a, b)| ray_segment_hit(center, dir, a, b))
            .filter(|t| bbox.contains(center.add(dir.scale(*t))))
            .min_by(|a, b| a.total_cmp(b));
        match nearest {
            Some(t) => {
                points.push(center.add(dir.scale(t)));
                sources.push(RefSource::Road);
            }
            None => {
                points.push(bbox_exit(center, dir, bbox));
                sources.push(RefSource::Truncated);
            }
        }
    }
    Ok(ReferencePoints { points, sources })
}

/// Replace road references with entrance POIs and truncate to the patch.
///
/// Entrances are matched greedily, globally nearest (entrance, slot) pair
/// first, ties broken by lower entrance index then lower slot index; each
/// entrance takes over the slot of its matched road reference. Points
/// outside `bbox` are then pulled back to the border along their ray from
/// `center` and tagged [`RefSource::Truncated`]. The output keeps exactly
/// `road_refs.len()` slots.
pub fn assemble_refs(
    road_refs: &ReferencePoints,
    entrances: &[Poi],
    center: GeoPoint,
    bbox: &BBox,
) -> Result<ReferencePoints> {
    let n = road_refs.len();
    let m = entrances.len();
    if m > n {
        return Err(Error::TooManyEntrances { entrances: m, slots: n });
    }
    let mut points = road_refs.points.clone();
    let mut sources = road_refs.sources.clone();

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * n);
    for (i, e) in entrances.iter().enumerate() {
        for (j, r) in road_refs.points.iter().enumerate() {
            pairs.push((e.location.dist(*r), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut entrance_done = vec![false; m];
    let mut slot_taken = vec![false; n];
    for (_, i, j) in pairs {
        if entrance_done[i] || slot_taken[j] {
            continue;
        }
        entrance_done[i] = true;
        slot_taken[j] = true;
        points[j] = entrances[i].location;
        sources[j] = RefSource::Entrance;
    }

    for (p, s) in points.iter_mut().zip(sources.iter_mut()) {
        let inside = p.x >= bbox.min.x && p.x <= bbox.max.x && p.y >= bbox.min.y && p.y <= bbox.max.y;
        if !inside {
            let d = p.sub(center);
            let len = d.norm();
            *p = if len > 0.0 { bbox_exit(center, d.scale(1.0 / len), bbox) } else { center };
            *s = RefSource::Truncated;
        }
    }
    Ok(ReferencePoints { points, sources })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{polygon_iou, Category, PoiKind};

    fn centered_square(half: f64) -> Polygon {
        Polygon::new(vec![
            GeoPoint::new(-half, -half),
            GeoPoint::new(half, -half),
            GeoPoint::new(half, half),
            GeoPoint::new(-half, half),
        ])
        .unwrap()
    }

    fn entrance(id: u64, p: GeoPoint) -> Poi {
        Poi { id, location: p, category: Category::RESIDENTIAL, kind: PoiKind::Entrance, parent_id: Some(0) }
    }

    #[test]
    fn ray_hits_from_inside_and_outside() {
        let sq = centered_square(0.5).translated(GeoPoint::new(0.5, 0.5));
        let h = ray_polygon_hits(GeoPoint::new(0.5, 0.5), GeoPoint::new(1.0, 0.0), &sq);
        assert_eq!(h.len(), 1);
        assert!((h[0] - 0.5).abs() < 1e-12);
        let h = ray_polygon_hits(GeoPoint::new(-1.0, 0.5), GeoPoint::new(1.0, 0.0), &sq);
        assert_eq!(h.len(), 2);
        assert!((h[0] - 1.0).abs() < 1e-12 && (h[1] - 2.0).abs() < 1e-12);
        assert!(ray_polygon_hits(GeoPoint::new(-1.0, 0.5), GeoPoint::new(-1.0, 0.0), &sq).is_empty());
    }

    #[test]
    fn square_sample_axis_points() {
        let s = sample_boundary(&centered_square(0.5), GeoPoint::new(0.0, 0.0), 4).unwrap();
        let expect = [(0.5, 0.0), (0.0, 0.5), (-0.5, 0.0), (0.0, -0.5)];
        for (p, e) in s.points.iter().zip(expect) {
            assert!((p.x - e.0).abs() < 1e-12 && (p.y - e.1).abs() < 1e-12, "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn circle_sample_is_radial() {
        let r = 0.3;
        let circle = Polygon::new(
            (0..64).map(|i| ray_direction(i, 64).scale(r).add(GeoPoint::new(0.5, 0.5))).collect(),
        )
        .unwrap();
        let s = sample_boundary(&circle, GeoPoint::new(0.5, 0.5), 24).unwrap();
        for (k, p) in s.points.iter().enumerate() {
            let d = p.sub(s.center);
            // chord sagitta of a 64-gon bounds the radial error
            assert!((d.norm() - r).abs() < r * (1.0 - (std::f64::consts::PI / 64.0).cos()) + 1e-12);
            let a = d.y.atan2(d.x).rem_euclid(TAU);
            let expect = TAU * k as f64 / 24.0;
            let diff = (a - expect).abs();
            assert!(diff < 1e-9 || (TAU - diff) < 1e-9);
        }
    }

    #[test]
    fn center_outside_or_on_boundary_is_rejected() {
        let sq = centered_square(0.5);
        assert!(matches!(sample_boundary(&sq, GeoPoint::new(2.0, 0.0), 8), Err(Error::OutsidePolygon(_))));
        assert!(matches!(sample_boundary(&sq, GeoPoint::new(0.5, 0.0), 8), Err(Error::OutsidePolygon(_))));
        assert!(sample_boundary(&sq, GeoPoint::new(0.0, 0.0), 2).is_err());
    }

    #[test]
    fn farthest_hit_on_non_star_shape() {
        // A "C" shape whose opening faces east; the east ray from the inner
        // pocket crosses the boundary three times.
        let c = Polygon::new(vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(3.0, 0.0),
            GeoPoint::new(3.0, 1.0),
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, 2.0),
            GeoPoint::new(3.0, 2.0),
            GeoPoint::new(3.0, 3.0),
            GeoPoint::new(0.0, 3.0),
        ])
        .unwrap();
        let center = GeoPoint::new(0.5, 0.5);
        let hits = ray_polygon_hits(center, GeoPoint::new(1.0, 0.0), &c);
        assert_eq!(hits.len(), 1);
        let s = sample_boundary(&c, GeoPoint::new(0.5, 1.5), 4).unwrap();
        // the pocket is open to the east, so the east ray leaves for good at x=1
        assert!((s.points[0].x - 1.0).abs() < 1e-12);
        let s = sample_boundary(&c, GeoPoint::new(2.0, 0.5), 4).unwrap();
        // north ray from (2, 0.5): exits at y=1, re-enters at y=2, exits at y=3
        assert!((s.points[1].y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_square_and_degenerate() {
        let pts = centered_square(1.0).vertices().to_vec();
        let p = reconstruct_polygon(&pts).unwrap();
        assert!((polygon_iou(&p, &centered_square(1.0)).unwrap() - 1.0).abs() < 1e-12);
        let line: Vec<_> = (0..4).map(|i| GeoPoint::new(i as f64, 0.0)).collect();
        let flat = reconstruct_polygon(&line).unwrap();
        assert!(polygon_iou(&flat, &centered_square(1.0)).is_err());
        assert!(reconstruct_polygon(&line[..2]).is_err());
    }

    fn block_roads() -> RoadNetwork {
        // square loop around (0.5, 0.5) with half-size 0.3, extended to the border
        let nodes = vec![
            GeoPoint::new(0.0, 0.2),
            GeoPoint::new(1.0, 0.2),
            GeoPoint::new(0.0, 0.8),
            GeoPoint::new(1.0, 0.8),
            GeoPoint::new(0.2, 0.0),
            GeoPoint::new(0.2, 1.0),
            GeoPoint::new(0.8, 0.0),
            GeoPoint::new(0.8, 1.0),
        ];
        RoadNetwork::new(nodes, vec![(0, 1), (2, 3), (4, 5), (6, 7)]).unwrap()
    }

    #[test]
    fn road_refs_on_block_edges() {
        let c = GeoPoint::new(0.5, 0.5);
        let refs = sample_road_refs(&block_roads(), c, 8, &BBox::unit()).unwrap();
        assert_eq!(refs.count(RefSource::Road), 8);
        assert!((refs.points[0].x - 0.8).abs() < 1e-12 && (refs.points[0].y - 0.5).abs() < 1e-12);
        assert!((refs.points[1].x - 0.8).abs() < 1e-12 && (refs.points[1].y - 0.8).abs() < 1e-12);
        assert!((refs.points[2].y - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_network_falls_back_to_border() {
        let refs = sample_road_refs(&RoadNetwork::empty(), GeoPoint::new(0.5, 0.5), 6, &BBox::unit()).unwrap();
        assert!(refs.all_truncated());
        for p in &refs.points {
            let on_border = p.x.abs() < 1e-12 || (p.x - 1.0).abs() < 1e-12 || p.y.abs() < 1e-12 || (p.y - 1.0).abs() < 1e-12;
            assert!(on_border, "{p:?}");
        }
    }

    #[test]
    fn assemble_identity_and_full_replacement() {
        let c = GeoPoint::new(0.5, 0.5);
        let bbox = BBox::unit();
        let roads = sample_road_refs(&block_roads(), c, 8, &bbox).unwrap();
        let same = assemble_refs(&roads, &[], c, &bbox).unwrap();
        assert_eq!(same, roads);

        let ents: Vec<Poi> =
            (0..8).rev().map(|k| entrance(k as u64, c.add(ray_direction(k, 8).scale(0.25)))).collect();
        let all = assemble_refs(&roads, &ents, c, &bbox).unwrap();
        assert_eq!(all.count(RefSource::Entrance), 8);
        for k in 0..8 {
            let e = c.add(ray_direction(k, 8).scale(0.25));
            assert!(all.points[k].dist(e) < 1e-12);
        }
        let too_many: Vec<Poi> = (0..9).map(|k| entrance(k, c)).collect();
        assert!(matches!(assemble_refs(&roads, &too_many, c, &bbox), Err(Error::TooManyEntrances { .. })));
    }

    #[test]
    fn assemble_two_entrances_and_truncation() {
        let c = GeoPoint::new(0.5, 0.5);
        let bbox = BBox::unit();
        let roads = sample_road_refs(&block_roads(), c, 8, &bbox).unwrap();
        let ents = vec![entrance(1, GeoPoint::new(0.75, 0.52)), entrance(2, GeoPoint::new(0.5, 1.4))];
        let out = assemble_refs(&roads, &ents, c, &bbox).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out.count(RefSource::Entrance), 1);
        assert_eq!(out.count(RefSource::Truncated), 1);
        assert_eq!(out.sources[0], RefSource::Entrance);
        // the out-of-patch entrance is pulled back to the top border on its ray
        assert!((out.points[2].y - 1.0).abs() < 1e-12 && (out.points[2].x - 0.5).abs() < 1e-12);

        let inside = vec![entrance(1, GeoPoint::new(0.75, 0.52)), entrance(2, GeoPoint::new(0.5, 0.78))];
        let out = assemble_refs(&roads, &inside, c, &bbox).unwrap();
        assert_eq!(out.count(RefSource::Entrance), 2);
        assert_eq!(out.count(RefSource::Road), 6);
    }
}
