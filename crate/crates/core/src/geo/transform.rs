use super::{BBox, GeoPoint};
use crate::error::{Error, Result};

/// Affine map between a geographic box and raster pixel space.
///
/// Pixel space has its origin at the top-left corner with `y` growing
/// downwards, so the box's min corner (south-west) maps to `(0, height)` and
/// the max corner (north-east) maps to `(width, 0)`. Pixel `(i, j)` covers
/// `[i, i + 1) × [j, j + 1)`; its center is at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPixelTransform {
    bbox: BBox,
    width: f64,
    height: f64,
}

impl GeoPixelTransform {
    pub fn new(bbox: BBox, width: usize, height: usize) -> Result<Self> {
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::Degenerate("zero-extent bbox".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Degenerate("zero-size raster".into()));
        }
        Ok(Self { bbox, width: width as f64, height: height as f64 })
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn to_pixel(&self, p: GeoPoint) -> GeoPoint {
        GeoPoint::new(
            (p.x - self.bbox.min.x) / self.bbox.width() * self.width,
            (self.bbox.max.y - p.y) / self.bbox.height() * self.height,
        )
    }

    pub fn to_geo(&self, px: GeoPoint) -> GeoPoint {
        GeoPoint::new(
            self.bbox.min.x + px.x / self.width * self.bbox.width(),
            self.bbox.max.y - px.y / self.height * self.bbox.height(),
        )
    }

    /// Geographic location of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> GeoPoint {
        self.to_geo(GeoPoint::new(col as f64 + 0.5, row as f64 + 0.5))
    }
}
