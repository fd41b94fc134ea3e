//! Raster rendering of a synthetic scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeoSample, WorldConfig};
use crate::geo::{point_in_polygon, point_segment_distance, Category, GeoPixelTransform, GeoPoint, Polygon};
use crate::imagery::RasterPatch;

pub(crate) const BACKGROUND: [u8; 3] = [96, 112, 84];
pub(crate) const ROAD: [u8; 3] = [138, 138, 134];
/// Amplitude of the zero-mean texture pattern.
pub(crate) const PATTERN: i32 = 14;

/// Base (untextured) fill color of a category before contrast scaling.
pub(crate) fn palette(category: Category) -> [u8; 3] {
    match category.code() {
        14 => [176, 140, 120],
        13 => [196, 176, 96],
        8 => [150, 162, 186],
        9 => [70, 70, 80],
        c => {
            let h = (c as u32).wrapping_mul(2_654_435_761);
            [60 + (h % 140) as u8, 60 + ((h >> 8) % 140) as u8, 60 + ((h >> 16) % 140) as u8]
        }
    }
}

/// Category fill color with the world's contrast applied.
pub(crate) fn fill_color(category: Category, contrast: f64) -> [f64; 3] {
    let p = palette(category);
    [0, 1, 2].map(|i| BACKGROUND[i] as f64 + contrast * (p[i] as f64 - BACKGROUND[i] as f64))
}

/// Zero-mean ±1 texture for a category at pixel `(col, row)`.
fn pattern(category: Category, col: usize, row: usize) -> i32 {
    let on = match category.code() % 4 {
        0 => (row / 2) % 2 == 0,             // stripes
        1 => (row / 3 + col / 3) % 2 == 0,   // blocks
        2 => (row / 4 + col / 4) % 2 == 0,   // coarse checker
        _ => (row + col) % 2 == 0,           // fine checker
    };
    if on {
        1
    } else {
        -1
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Render background noise, textured AOIs with a one-pixel fence, then roads.
///
/// Deterministic in `(cfg.seed, sample.id)`.
pub fn render_scene(sample: &GeoSample, cfg: &WorldConfig) -> RasterPatch {
    let size = cfg.image_size;
    let tf = GeoPixelTransform::new(sample.bbox, size, size).expect("valid bbox");
    let px = sample.bbox.width() / size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a6e);
    rng.set_stream(sample.id);
    let noise = cfg.pixel_noise as i32;
    let mut areas: Vec<(&Polygon, Category)> = vec![(&sample.aoi, sample.core.category)];
    areas.extend(sample.neighbors.iter().map(|n| (&n.polygon, n.core.category)));
    let roads: Vec<(GeoPoint, GeoPoint)> = sample.roads.segment_points().collect();

    let mut patch = RasterPatch::filled(size, size, BACKGROUND, sample.bbox);
    for row in 0..size {
        for col in 0..size {
            let p = tf.pixel_center(col, row);
            let mut jitter = || if noise > 0 { rng.gen_range(-noise..=noise) } else { 0 };
            let mut rgb = BACKGROUND.map(|c| c as f64);
            let mut textured = None;
            for (poly, cat) in &areas {
                if point_in_polygon(p, poly) {
                    let fence = poly.edges().any(|(a, b)| point_segment_distance(p, a, b) < 0.5 * px);
                    if fence {
                        rgb = fill_color(*cat, cfg.contrast).map(|v| v * 0.6);
                    } else {
                        rgb = fill_color(*cat, cfg.contrast);
                        textured = Some(*cat);
                    }
                    break;
                }
            }
            let t = textured.map_or(0, |c| PATTERN * pattern(c, col, row));
            let on_road = roads.iter().any(|&(a, b)| point_segment_distance(p, a, b) <= cfg.road_half_width_px * px);
            if on_road {
                rgb = ROAD.map(|c| c as f64);
            }
            let out = [0, 1, 2].map(|i| {
                let j = jitter();
                let t = if on_road { 0 } else { t };
                to_u8(rgb[i] + (t + j) as f64)
            });
            patch.set_pixel(col, row, out);
        }
    }
    patch
}
