//! AOI outline families.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::geo::{Category, GeoPoint};

/// Per-category outline signature.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShapeStyle {
    /// Superellipse exponent: 2 is an ellipse, larger is boxier.
    pub exponent: f64,
    pub aspect: (f64, f64),
    pub size: f64,
}

pub(crate) fn style(category: Category) -> ShapeStyle {
    match category.code() {
        14 => ShapeStyle { exponent: 4.0, aspect: (1.0, 1.5), size: 1.15 },
        13 | 10 | 5 => ShapeStyle { exponent: 2.0, aspect: (1.4, 2.0), size: 1.0 },
        8 | 17 => ShapeStyle { exponent: 6.0, aspect: (1.0, 2.0), size: 1.2 },
        9 => ShapeStyle { exponent: 8.0, aspect: (1.2, 2.0), size: 0.6 },
        _ => ShapeStyle { exponent: 2.5, aspect: (1.0, 1.6), size: 1.0 },
    }
}

fn rotate(p: GeoPoint, theta: f64) -> GeoPoint {
    let (s, c) = theta.sin_cos();
    GeoPoint::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// A radially perturbed superellipse around the origin with `vertices`
/// vertices in increasing angle (hence simple and star-shaped about the
/// origin). `radius` is the geometric mean of the two semi-axes.
pub(crate) fn star_outline(
    rng: &mut impl Rng,
    style: ShapeStyle,
    radius: f64,
    vertices: usize,
    irregularity: f64,
) -> Vec<GeoPoint> {
    let aspect = rng.gen_range(style.aspect.0..=style.aspect.1);
    let a = radius * aspect.sqrt();
    let b = radius / aspect.sqrt();
    let theta = rng.gen_range(0.0..PI);
    let harmonics: Vec<(f64, f64, f64)> =
        (2..5).map(|m| (m as f64, rng.gen_range(-1.0..1.0) / 3.0, rng.gen_range(0.0..TAU))).collect();
    let e = style.exponent;
    let step = TAU / vertices as f64;
    (0..vertices)
        .map(|j| {
            let phi = j as f64 * step + rng.gen_range(-0.3..0.3) * step;
            let (s, c) = phi.sin_cos();
            let r = ((c / a).abs().powf(e) + (s / b).abs().powf(e)).powf(-1.0 / e);
            let noise: f64 = harmonics.iter().map(|(m, amp, ph)| amp * (m * phi + ph).sin()).sum();
            let r = r * (1.0 + irregularity * noise);
            rotate(GeoPoint::new(r * c, r * s), theta)
        })
        .collect()
}

/// A U-shaped outline (not star-shaped about its base) plus a point in the
/// base from which some rays cross the notch and re-enter an arm.
pub(crate) fn notched_outline(rng: &mut impl Rng, radius: f64) -> (Vec<GeoPoint>, GeoPoint) {
    let a = radius * rng.gen_range(1.0..1.25);
    let b = radius * rng.gen_range(0.8..1.0);
    let w = a / 3.0;
    let floor = -0.2 * b;
    let theta = rng.gen_range(0.0..TAU);
    let ring = [
        (-a, -b),
        (a, -b),
        (a, b),
        (w, b),
        (w, floor),
        (-w, floor),
        (-w, b),
        (-a, b),
    ]
    .iter()
    .map(|&(x, y)| rotate(GeoPoint::new(x, y), theta))
    .collect();
    (ring, rotate(GeoPoint::new(0.0, -0.6 * b), theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{point_in_polygon, Polygon};
    use crate::sampling::{ray_direction, ray_polygon_hits};
    use rand::SeedableRng;

    #[test]
    fn star_outlines_are_simple_and_contain_origin() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for cat in [8, 9, 13, 14, 3] {
            for _ in 0..50 {
                let ring = star_outline(&mut rng, style(Category::new(cat).unwrap()), 0.2, 14, 0.15);
                let p = Polygon::new(ring).unwrap();
                assert!(p.is_simple());
                assert!(point_in_polygon(GeoPoint::new(0.0, 0.0), &p));
            }
        }
    }

    #[test]
    fn notched_outline_is_not_star_shaped_about_its_anchor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (ring, anchor) = notched_outline(&mut rng, 0.2);
        let p = Polygon::new(ring).unwrap();
        assert!(p.is_simple());
        assert!(point_in_polygon(anchor, &p));
        let multi = (0..64).any(|k| ray_polygon_hits(anchor, ray_direction(k, 64), &p).len() > 1);
        assert!(multi);
    }
}
