use super::{GeoPoint, Polygon, EPS};
use crate::error::{Error, Result};

/// Convex hull by Andrew's monotone chain; counter-clockwise, collinear
/// boundary points dropped.
pub fn convex_hull(points: &[GeoPoint]) -> Result<Polygon> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("convex hull needs 3 points, got {}", points.len())));
    }
    let mut pts: Vec<GeoPoint> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.dist(*b) <= EPS);

    let turn = |o: GeoPoint, a: GeoPoint, b: GeoPoint| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<GeoPoint> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS * EPS {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS * EPS {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    Polygon::new(hull)
}
