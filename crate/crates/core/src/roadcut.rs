//! Road-cut baseline: split the patch into the faces of the planar
//! arrangement formed by the road segments and the patch border, and take
//! the face containing the core POI as its AOI.

use serde::{Deserialize, Serialize};

use crate::geo::geojson::{Feature, FeatureCollection};
use crate::geo::{point_segment_distance, BBox, GeoPoint, Poi, Polygon, RoadNetwork, EPS};

/// A bounded face of the arrangement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub polygon: Polygon,
    /// Whether at least one road edge lies on the face boundary (as opposed
    /// to the patch border or an island bridge only).
    pub road_bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarFaces {
    pub faces: Vec<Face>,
    pub bbox: BBox,
}

impl PlanarFaces {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| f.polygon.signed_area()).sum()
    }

    pub fn to_geojson(&self) -> FeatureCollection {
        let mut fc = FeatureCollection::default();
        for (i, f) in self.faces.iter().enumerate() {
            fc.push(
                Feature::polygon(&f.polygon)
                    .with("role", "face")
                    .with("face", i as u64)
                    .with("road_bounded", f.road_bounded),
            );
        }
        fc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeKind {
    Road,
    Border,
    Bridge,
}

/// Clip segment `a–b` to `bbox` (Liang–Barsky).
fn clip_segment(a: GeoPoint, b: GeoPoint, bbox: &BBox) -> Option<(GeoPoint, GeoPoint)> {
    let d = b.sub(a);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - bbox.min.x),
        (d.x, bbox.max.x - a.x),
        (-d.y, a.y - bbox.min.y),
        (d.y, bbox.max.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| (a.lerp(b, t0), a.lerp(b, t1)))
}

struct Arrangement {
    tol: f64,
    vertices: Vec<GeoPoint>,
    /// Undirected edges `(u, v, kind)` with `u < v`.
    edges: Vec<(usize, usize, EdgeKind)>,
}

impl Arrangement {
    fn vertex(&mut self, p: GeoPoint) -> usize {
        if let Some(i) = self.vertices.iter().position(|q| q.dist(p) <= self.tol) {
            return i;
        }
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    fn add_edge(&mut self, a: usize, b: usize, kind: EdgeKind) {
        if a == b {
            return;
        }
        let (u, v) = (a.min(b), a.max(b));
        if let Some(e) = self.edges.iter_mut().find(|e| e.0 == u && e.1 == v) {
            if kind == EdgeKind::Road {
                e.2 = EdgeKind::Road;
            }
            return;
        }
        self.edges.push((u, v, kind));
    }

    fn build(segments: &[(GeoPoint, GeoPoint, EdgeKind)], tol: f64) -> Self {
        let mut arr = Arrangement { tol, vertices: Vec::new(), edges: Vec::new() };
        for (i, &(a, b, kind)) in segments.iter().enumerate() {
            let d = b.sub(a);
            let len2 = d.dot(d);
            let mut ts = vec![0.0, 1.0];
            for (j, &(c, e, _)) in segments.iter().enumerate() {
                if i == j {
                    continue;
                }
                // endpoints of the other segment lying on this one (T-junctions, overlaps)
                for q in [c, e] {
                    if point_segment_distance(q, a, b) <= tol {
                        ts.push((q.sub(a).dot(d) / len2).clamp(0.0, 1.0));
                    }
                }
                // proper crossings
                let f = e.sub(c);
                let den = d.cross(f);
                if den.abs() > EPS * d.norm() * f.norm() {
                    let w = c.sub(a);
                    let t = w.cross(f) / den;
                    let s = w.cross(d) / den;
                    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s) {
                        ts.push(t);
                    }
                }
            }
            ts.sort_by(|x, y| x.total_cmp(y));
            let mut prev = arr.vertex(a);
            for t in ts.into_iter().skip(1) {
                let v = arr.vertex(a.lerp(b, t));
                arr.add_edge(prev, v, kind);
                prev = v;
            }
        }
        arr
    }

    fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(u, v, _) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Repeatedly drop edges with a degree-1 endpoint (dead-end roads).
    fn prune_dangling(&mut self) {
        loop {
            let deg = self.degrees();
            let before = self.edges.len();
            self.edges.retain(|&(u, v, _)| deg[u] > 1 && deg[v] > 1);
            if self.edges.len() == before {
                break;
            }
        }
    }

    fn components(&self) -> Vec<usize> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(u, v, _) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..n).map(|x| find(&mut parent, x)).collect()
    }

    /// Connect every component that does not touch the border to the rest
    /// by a bridge edge running left from its leftmost vertex, so holes end
    /// up inside the ring of their surrounding face.
    fn bridge_islands(&mut self, border_vertex: usize) {
        loop {
            let comp = self.components();
            let used: Vec<bool> = {
                let mut u = vec![false; self.vertices.len()];
                for &(a, b, _) in &self.edges {
                    u[a] = true;
                    u[b] = true;
                }
                u
            };
            let anchor = comp[border_vertex];
            // leftmost vertex of each island, islands processed left to right
            let mut best: Option<usize> = None;
            for v in 0..self.vertices.len() {
                if !used[v] || comp[v] == anchor {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (p, q) = (self.vertices[v], self.vertices[b]);
                        p.x < q.x || (p.x == q.x && p.y < q.y)
                    }
                };
                if better {
                    best = Some(v);
                }
            }
            let Some(v) = best else { break };
            let p = self.vertices[v];
            // nearest crossing of the leftward ray with an edge of another component
            let mut hit: Option<(f64, usize, GeoPoint)> = None;
            for (ei, &(a, b, _)) in self.edges.iter().enumerate() {
                if comp[a] == comp[v] {
                    continue;
                }
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                if (pa.y - p.y) * (pb.y - p.y) > 0.0 || pa.y == pb.y {
                    continue;
                }
                let x = pa.x + (p.y - pa.y) * (pb.x - pa.x) / (pb.y - pa.y);
                if x < p.x && hit.map_or(true, |h| p.x - x < h.0) {
                    hit = Some((p.x - x, ei, GeoPoint::new(x, p.y)));
                }
            }
            let Some((_, ei, q)) = hit else { break };
            let (a, b, kind) = self.edges[ei];
            let h = self.vertex(q);
            if h != a && h != b {
                self.edges.swap_remove(ei);
                self.add_edge(a, h, kind);
                self.add_edge(h, b, kind);
            }
            self.add_edge(v, h, EdgeKind::Bridge);
        }
    }

    /// Trace every face with the face on the left of each half-edge and keep
    /// the positively oriented (bounded) ones.
    fn faces(&self) -> Vec<Face> {
        let n = self.vertices.len();
        // half-edge 2e: u→v, 2e+1: v→u
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let endpoints = |h: usize| {
            let (u, v, _) = self.edges[h / 2];
            if h % 2 == 0 {
                (u, v)
            } else {
                (v, u)
            }
        };
        for h in 0..2 * self.edges.len() {
            out[endpoints(h).0].push(h);
        }
        let angle = |h: usize| {
            let (a, b) = endpoints(h);
            let d = self.vertices[b].sub(self.vertices[a]);
            d.y.atan2(d.x)
        };
        for list in &mut out {
            list.sort_by(|&x, &y| angle(x).total_cmp(&angle(y)));
        }
        let mut pos = vec![0; 2 * self.edges.len()];
        for list in &out {
            for (i, &h) in list.iter().enumerate() {
                pos[h] = i;
            }
        }
        let mut seen = vec![false; 2 * self.edges.len()];
        let mut faces = Vec::new();
        for start in 0..2 * self.edges.len() {
            if seen[start] {
                continue;
            }
            let mut ring = Vec::new();
            let mut road = false;
            let mut h = start;
            while !seen[h] {
                seen[h] = true;
                let (u, v) = endpoints(h);
                ring.push(self.vertices[u]);
                road |= self.edges[h / 2].2 == EdgeKind::Road;
                // at v, turn to the next outgoing edge clockwise from v→u
                let twin = h ^ 1;
                let list = &out[v];
                h = list[(pos[twin] + list.len() - 1) % list.len()];
            }
            let area = shoelace(&ring);
            if area > self.tol * self.tol {
                if let Ok(polygon) = Polygon::new(ring) {
                    faces.push(Face { polygon, road_bounded: road });
                }
            }
        }
        faces
    }
}

fn shoelace(ring: &[GeoPoint]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].cross(ring[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Faces of the arrangement of `roads` (clipped to `bbox`) and the border.
pub fn polygonize(roads: &RoadNetwork, bbox: &BBox) -> PlanarFaces {
    let scale = bbox.width().max(bbox.height());
    let tol = EPS * scale;
    let mut segments = Vec::new();
    let c = bbox.corners();
    for i in 0..4 {
        segments.push((c[i], c[(i + 1) % 4], EdgeKind::Border));
    }
    for (a, b) in roads.segment_points() {
        if let Some((p, q)) = clip_segment(a, b, bbox) {
            if p.dist(q) > tol {
                segments.push((p, q, EdgeKind::Road));
            }
        }
    }
    let mut arr = Arrangement::build(&segments, tol);
    arr.prune_dangling();
    let corner = arr.vertex(c[0]);
    arr.bridge_islands(corner);
    PlanarFaces { faces: arr.faces(), bbox: *bbox }
}

/// The face containing the core POI, if it is a usable road-cut result.
///
/// `None` when the POI lies on a road, lies outside every face, or its face
/// is not bounded by any road (no road loop encloses it).
pub fn roadcut_aoi(core: &Poi, faces: &PlanarFaces, roads: &RoadNetwork) -> Option<Polygon> {
    let q = core.location;
    let tol = EPS * faces.bbox.width().max(faces.bbox.height());
    if roads.segment_points().any(|(a, b)| point_segment_distance(q, a, b) <= tol) {
        return None;
    }
    let face = faces.faces.iter().find(|f| crate::geo::point_in_polygon(q, &f.polygon))?;
    face.road_bounded.then(|| face.polygon.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Category, PoiKind};

    fn poi(x: f64, y: f64) -> Poi {
        Poi {
            id: 1,
            location: GeoPoint::new(x, y),
            category: Category::new(14).unwrap(),
            kind: PoiKind::Core,
            parent_id: None,
        }
    }

    fn lines(segs: &[((f64, f64), (f64, f64))]) -> RoadNetwork {
        let mut nodes = Vec::new();
        let mut s = Vec::new();
        for (a, b) in segs {
            nodes.push(GeoPoint::new(a.0, a.1));
            nodes.push(GeoPoint::new(b.0, b.1));
            s.push((nodes.len() - 2, nodes.len() - 1));
        }
        RoadNetwork::new(nodes, s).unwrap()
    }

    fn grid(k: usize) -> RoadNetwork {
        let mut segs = Vec::new();
        for i in 1..k {
            let t = i as f64 / k as f64;
            segs.push(((t, -0.1), (t, 1.1)));
            segs.push(((-0.1, t), (1.1, t)));
        }
        lines(&segs)
    }

    #[test]
    fn cross_gives_four_faces() {
        let f = polygonize(&lines(&[((0.0, 0.4), (1.0, 0.4)), ((0.3, 0.0), (0.3, 1.0))]), &BBox::unit());
        assert_eq!(f.len(), 4);
        let mut areas: Vec<f64> = f.faces.iter().map(|x| x.polygon.signed_area()).collect();
        areas.sort_by(f64::total_cmp);
        let expect = [0.3 * 0.4, 0.7 * 0.4, 0.3 * 0.6, 0.7 * 0.6];
        let mut expect = expect.to_vec();
        expect.sort_by(f64::total_cmp);
        for (a, b) in areas.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_network_is_one_face() {
        let f = polygonize(&RoadNetwork::empty(), &BBox::unit());
        assert_eq!(f.len(), 1);
        assert!((f.total_area() - 1.0).abs() < 1e-12);
        assert!(!f.faces[0].road_bounded);
        assert_eq!(roadcut_aoi(&poi(0.5, 0.5), &f, &RoadNetwork::empty()), None);
    }

    #[test]
    fn grid_faces_sum_to_bbox() {
        for k in 2..6 {
            let f = polygonize(&grid(k), &BBox::unit());
            assert_eq!(f.len(), k * k);
            assert!((f.total_area() - 1.0).abs() < 1e-9);
            let cell = 1.0 / (k * k) as f64;
            assert!(f.faces.iter().all(|x| (x.polygon.signed_area() - cell).abs() < 1e-9));
        }
    }

    #[test]
    fn poi_in_cell_gets_cell() {
        let roads = grid(4);
        let f = polygonize(&roads, &BBox::unit());
        let aoi = roadcut_aoi(&poi(0.6, 0.4), &f, &roads).unwrap();
        let b = aoi.bbox();
        assert!((b.min.x - 0.5).abs() < 1e-12 && (b.max.x - 0.75).abs() < 1e-12);
        assert!((b.min.y - 0.25).abs() < 1e-12 && (b.max.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn poi_on_road_is_rejected() {
        let roads = grid(2);
        let f = polygonize(&roads, &BBox::unit());
        assert_eq!(roadcut_aoi(&poi(0.5, 0.3), &f, &roads), None);
    }

    #[test]
    fn dangling_roads_only_give_none() {
        let roads = lines(&[((0.2, 0.5), (0.6, 0.5)), ((0.6, 0.5), (0.6, 0.8)), ((0.5, 0.1), (0.5, 0.3))]);
        let f = polygonize(&roads, &BBox::unit());
        assert_eq!(f.len(), 1);
        assert_eq!(roadcut_aoi(&poi(0.3, 0.3), &f, &roads), None);
    }

    #[test]
    fn island_loop_becomes_hole_of_surrounding_face() {
        let roads = lines(&[
            ((0.4, 0.4), (0.6, 0.4)),
            ((0.6, 0.4), (0.6, 0.6)),
            ((0.6, 0.6), (0.4, 0.6)),
            ((0.4, 0.6), (0.4, 0.4)),
            ((0.0, 0.2), (1.0, 0.2)),
        ]);
        let f = polygonize(&roads, &BBox::unit());
        assert!((f.total_area() - 1.0).abs() < 1e-12);
        let inner = roadcut_aoi(&poi(0.5, 0.5), &f, &roads).unwrap();
        assert!((inner.signed_area() - 0.04).abs() < 1e-12);
        let outer = roadcut_aoi(&poi(0.2, 0.8), &f, &roads).unwrap();
        assert!((outer.signed_area() - (0.8 - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn open_face_at_border_is_kept() {
        // one road across the patch: both halves are bounded by road + border
        let roads = lines(&[((0.0, 0.7), (1.0, 0.7))]);
        let f = polygonize(&roads, &BBox::unit());
        let aoi = roadcut_aoi(&poi(0.5, 0.5), &f, &roads).unwrap();
        assert!((aoi.signed_area() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn faces_export_as_geojson() {
        let f = polygonize(&grid(2), &BBox::unit());
        let fc = f.to_geojson();
        assert_eq!(fc.features.len(), 4);
        let back = FeatureCollection::from_json(&fc.to_json().unwrap()).unwrap();
        assert_eq!(back.features.len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn random_segments_partition_the_bbox(
                segs in prop::collection::vec(((-0.2f64..1.2, -0.2f64..1.2), (-0.2f64..1.2, -0.2f64..1.2)), 0..9),
                qx in 0.01f64..0.99, qy in 0.01f64..0.99,
            ) {
                let roads = lines(&segs);
                let f = polygonize(&roads, &BBox::unit());
                prop_assert!((f.total_area() - 1.0).abs() < 1e-6, "area {}", f.total_area());
                prop_assert!(f.faces.iter().all(|x| x.polygon.signed_area() > 0.0));
                let q = GeoPoint::new(qx, qy);
                let on_road = roads.segment_points().any(|(a, b)| point_segment_distance(q, a, b) < 1e-6);
                let near_face_edge = f.faces.iter().any(|x| x.polygon.edges().any(|(a, b)| point_segment_distance(q, a, b) < 1e-6));
                if !on_road && !near_face_edge {
                    let hits = f.faces.iter().filter(|x| crate::geo::point_in_polygon(q, &x.polygon)).count();
                    prop_assert_eq!(hits, 1);
                }
            }
        }
    }
}
