//! Category activity profiles and LBS trace sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{random_point_in, GeoSample, WorldConfig};
use crate::geo::{point_in_polygon, Category, GeoPoint};
use crate::reliability::LbsPoint;

/// Monday 2024-04-01 00:00:00 UTC.
pub const WEEK_START: i64 = 1_711_929_600;

const DAY: i64 = 86_400;

/// Relative activity per local hour of day.
pub fn hourly_profile(category: Category) -> [f64; 24] {
    let mut h = [1.0; 24];
    let mut set = |range: std::ops::Range<usize>, v: f64| {
        for i in range {
            h[i] = v;
        }
    };
    match category.code() {
        // residential, hotels: evenings and nights
        14 | 6 => {
            set(0..8, 2.0);
            set(8..18, 0.5);
            set(18..24, 3.0);
        }
        // offices, companies, government: working hours
        12 | 18 | 4 => {
            set(0..7, 0.1);
            set(7..9, 0.8);
            set(9..19, 3.0);
            set(19..24, 0.3);
        }
        // schools
        13 | 10 | 5 => {
            set(0..7, 0.05);
            set(7..17, 3.0);
            set(17..24, 0.3);
        }
        // industry
        8 | 17 => {
            set(0..6, 0.3);
            set(6..19, 2.5);
            set(19..24, 0.6);
        }
        // parking: broad daytime plateau
        9 => {
            set(0..6, 0.3);
            set(6..23, 1.5);
            set(23..24, 0.5);
        }
        // leisure, retail, squares, sights
        0 | 2 | 7 | 11 | 16 => {
            set(0..9, 0.2);
            set(9..22, 2.0);
            set(22..24, 0.5);
        }
        _ => {}
    }
    h
}

/// Relative activity per weekday, Monday first.
pub fn weekday_profile(category: Category) -> [f64; 7] {
    match category.code() {
        12 | 18 | 4 | 13 | 10 | 5 => [1.0, 1.0, 1.0, 1.0, 1.0, 0.15, 0.1],
        8 | 17 => [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.3],
        14 | 6 => [0.9, 0.9, 0.9, 0.9, 1.0, 1.3, 1.3],
        0 | 2 | 7 | 11 | 16 => [0.7, 0.7, 0.7, 0.7, 0.9, 1.6, 1.6],
        _ => [1.0; 7],
    }
}

/// Local `(weekday, hour)`, Monday = 0, for a Unix timestamp.
pub fn local_weekday_hour(timestamp: i64, tz_offset_hours: i32) -> (usize, usize) {
    let local = timestamp + tz_offset_hours as i64 * 3600;
    let days = local.div_euclid(DAY);
    // 1970-01-01 was a Thursday
    let weekday = (days + 3).rem_euclid(7) as usize;
    let hour = (local.rem_euclid(DAY) / 3600) as usize;
    (weekday, hour)
}

/// Draw a timestamp within the reference week from the category profiles.
pub(crate) fn sample_timestamp(category: Category, tz_offset_hours: i32, rng: &mut impl Rng) -> i64 {
    let days = WeightedIndex::new(weekday_profile(category)).expect("positive weights");
    let hours = WeightedIndex::new(hourly_profile(category)).expect("positive weights");
    let d = days.sample(rng) as i64;
    let h = hours.sample(rng) as i64;
    let s = rng.gen_range(0..3600);
    WEEK_START + d * DAY + h * 3600 + s - tz_offset_hours as i64 * 3600
}

/// LBS trace for a sample: points uniformly inside the AOI, except a
/// `lbs_leakage` share uniformly in the patch outside it; timestamps follow
/// the category profile in the world's timezone.
pub fn sample_lbs(sample: &GeoSample, cfg: &WorldConfig, rng: &mut impl Rng) -> Vec<LbsPoint> {
    let bbox = sample.bbox;
    let aoi = &sample.aoi;
    let category = sample.core.category;
    (0..cfg.lbs_points)
        .map(|_| {
            let location = if rng.gen::<f64>() < cfg.lbs_leakage {
                loop {
                    let p = GeoPoint::new(
                        rng.gen_range(bbox.min.x..bbox.max.x),
                        rng.gen_range(bbox.min.y..bbox.max.y),
                    );
                    if !point_in_polygon(p, aoi) {
                        break p;
                    }
                }
            } else {
                random_point_in(aoi, rng)
            };
            LbsPoint { location, timestamp: sample_timestamp(category, cfg.tz_offset_hours, rng) }
        })
        .collect()
}
