//! Area of the intersection of two polygonal regions by boundary clipping.
//!
//! Every edge of both rings is split at all crossings (with the other ring
//! and with its own ring). A fragment belongs to the boundary of the target
//! region when the region is present on exactly one side of it; the fragment
//! is then oriented with the region on its left and contributes its
//! Green's-theorem term `½ (p × q)`. Regions are even-odd, so the method
//! works for non-convex and self-intersecting rings alike.

use super::{crossing_parity, point_segment_distance, GeoPoint, EPS};

struct Edge {
    a: GeoPoint,
    b: GeoPoint,
    owner: u8,
}

fn ring_edges(ring: &[GeoPoint], owner: u8, out: &mut Vec<Edge>) {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if a != b {
            out.push(Edge { a, b, owner });
        }
    }
}

/// Parameters along `p0 → p1` where the segment meets `q0 → q1`.
fn split_params(p0: GeoPoint, p1: GeoPoint, q0: GeoPoint, q1: GeoPoint, out: &mut Vec<f64>) {
    let d1 = p1.sub(p0);
    let d2 = q1.sub(q0);
    let l1 = d1.norm();
    let l2 = d2.norm();
    let denom = d1.cross(d2);
    let w = q0.sub(p0);
    if denom.abs() > 1e-14 * l1 * l2 {
        let t = w.cross(d2) / denom;
        let u = w.cross(d1) / denom;
        let tol_t = EPS / l1;
        let tol_u = EPS / l2;
        if t > -tol_t && t < 1.0 + tol_t && u > -tol_u && u < 1.0 + tol_u {
            out.push(t.clamp(0.0, 1.0));
        }
    } else if w.cross(d1).abs() <= EPS * l1 {
        // collinear: split at the other segment's endpoints
        for q in [q0, q1] {
            let t = q.sub(p0).dot(d1) / (l1 * l1);
            if t > 0.0 && t < 1.0 {
                out.push(t);
            }
        }
    }
}

fn fragments(edges: &[Edge]) -> Vec<(GeoPoint, GeoPoint, u8)> {
    let mut frags = Vec::new();
    let mut ts = Vec::new();
    for (i, e) in edges.iter().enumerate() {
        ts.clear();
        ts.push(0.0);
        ts.push(1.0);
        for (j, f) in edges.iter().enumerate() {
            if i != j {
                split_params(e.a, e.b, f.a, f.b, &mut ts);
            }
        }
        ts.sort_by(|x, y| x.total_cmp(y));
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        for w in ts.windows(2) {
            let (s, t) = (e.a.lerp(e.b, w[0]), e.a.lerp(e.b, w[1]));
            if s.dist(t) > 1e-15 {
                frags.push((s, t, e.owner));
            }
        }
    }
    frags
}

fn on_ring(q: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    (0..n).any(|i| point_segment_distance(q, ring[i], ring[(i + 1) % n]) <= EPS)
}

fn boundary_integral(rings: &[&[GeoPoint]], inside: impl Fn(GeoPoint) -> bool) -> f64 {
    let mut edges = Vec::new();
    for (k, r) in rings.iter().enumerate() {
        ring_edges(r, k as u8, &mut edges);
    }
    if edges.is_empty() {
        return 0.0;
    }
    // Work relative to a local origin to limit cancellation.
    let mut lo = edges[0].a;
    let mut hi = edges[0].a;
    for e in &edges {
        for p in [e.a, e.b] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
    }
    let scale = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
    let h = scale * 1e-9;
    let mut twice_area = 0.0;
    for (s, t, owner) in fragments(&edges) {
        let m = s.lerp(t, 0.5);
        // Fragments shared by several rings are counted from the lowest owner only.
        if (0..owner as usize).any(|k| on_ring(m, rings[k])) {
            continue;
        }
        let d = t.sub(s);
        let n = GeoPoint::new(-d.y, d.x).scale(1.0 / d.norm());
        let left = inside(m.add(n.scale(h)));
        let right = inside(m.sub(n.scale(h)));
        let (s, t) = (s.sub(lo), t.sub(lo));
        match (left, right) {
            (true, false) => twice_area += s.cross(t),
            (false, true) => twice_area += t.cross(s),
            _ => {}
        }
    }
    0.5 * twice_area
}

/// Area of the even-odd region bounded by `ring`.
///
/// For simple rings this equals the absolute shoelace area.
pub fn region_area(ring: &[GeoPoint]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    boundary_integral(&[ring], |q| crossing_parity(q, ring)).max(0.0)
}

/// Area of the intersection of the even-odd regions of `a` and `b`.
pub fn region_intersection_area(a: &[GeoPoint], b: &[GeoPoint]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    boundary_integral(&[a, b], |q| crossing_parity(q, a) && crossing_parity(q, b)).max(0.0)
}
