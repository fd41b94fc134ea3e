//! SVG overlay of ground truth (red) and prediction (green) on the patch frame.

use std::fmt::Write as _;

use aoi_core::geo::GeoPoint;

/// `size`-pixel square drawing of normalized-coordinate rings (y up).
pub fn overlay(size: usize, truth: &[GeoPoint], prediction: &[GeoPoint], refs: &[GeoPoint]) -> String {
    let s = size as f64;
    let px = |p: &GeoPoint| (p.x * s, (1.0 - p.y) * s);
    let path = |ring: &[GeoPoint]| {
        let mut d = String::new();
        for (i, p) in ring.iter().enumerate() {
            let (x, y) = px(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        d.push('Z');
        d
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    let _ = writeln!(out, "<rect width=\"{size}\" height=\"{size}\" fill=\"#f4f4f0\"/>");
    let _ = writeln!(out, "<path class=\"truth\" d=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>", path(truth));
    let _ = writeln!(
        out,
        "<path class=\"prediction\" d=\"{}\" fill=\"none\" stroke=\"green\" stroke-width=\"2\"/>",
        path(prediction)
    );
    for r in refs {
        let (x, y) = px(r);
        let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"#3060c0\"/>");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_closed_paths_in_pixel_frame() {
        let sq = [GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0), GeoPoint::new(1.0, 1.0)];
        let svg = overlay(100, &sq, &sq, &[GeoPoint::new(0.5, 0.5)]);
        assert_eq!(svg.matches("<path").count(), 2);
        assert_eq!(svg.matches("Z\"").count(), 2);
        assert!(svg.contains("M0.00,100.00 L100.00,100.00 L100.00,0.00 Z"));
        assert!(svg.contains("stroke=\"red\"") && svg.contains("stroke=\"green\""));
    }
}
