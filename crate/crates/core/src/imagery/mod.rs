//! Raster patches: stitching a tile mosaic around the core POI, raster I/O,
//! and the learned token/query projections.

mod io;
mod projection;

pub use io::{read_patch, read_ppm, write_patch, write_ppm, RasterFormat, RasterSidecar};
pub use projection::{
    cell_center, grid_coords, patch_input, posenc_2d, ConvLayerSpec, ConvStem, QueryFeatureMap,
    StemSpec, TokenGrid,
};
pub(crate) use projection::{grid_posenc, uniform_init};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BBox, GeoPoint};

/// Side length, in degrees, of the crop window around the core POI.
pub const CROP_WINDOW_DEG: f64 = 0.006;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatchMeta {
    pub tile_ids: Vec<String>,
    /// Set when the crop window had to be shifted to stay inside the mosaic.
    pub clamped: bool,
}

/// `height × width × 3` RGB pixels, top row first, covering `bbox`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub bbox: BBox,
    pub meta: PatchMeta,
}

impl RasterPatch {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, bbox: BBox) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("raster must be non-empty".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB raster", pixels.len())));
        }
        Ok(Self { width, height, pixels, bbox, meta: PatchMeta::default() })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3], bbox: BBox) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels, bbox, meta: PatchMeta::default() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn with_meta(mut self, meta: PatchMeta) -> Self {
        self.meta = meta;
        self
    }
}

/// A row-major grid of equally sized tiles; row 0 is the northernmost.
#[derive(Debug, Clone)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
    tiles: Vec<Option<(String, RasterPatch)>>,
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, tiles: vec![None; rows * cols] }
    }

    pub fn insert(&mut self, row: usize, col: usize, id: impl Into<String>, tile: RasterPatch) {
        self.tiles[row * self.cols + col] = Some((id.into(), tile));
    }

    fn tile(&self, row: usize, col: usize) -> &RasterPatch {
        &self.tiles[row * self.cols + col].as_ref().expect("validated").1
    }
}

/// Mosaic the tiles and crop a `window_deg`-wide square centered on `center`.
///
/// The crop is pixel-exact: every output pixel is copied from exactly one
/// tile pixel. Windows that would leave the mosaic are shifted inward and
/// flagged via [`PatchMeta::clamped`].
pub fn stitch_and_crop(grid: &TileGrid, center: GeoPoint, window_deg: f64) -> Result<RasterPatch> {
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if grid.tiles[r * grid.cols + c].is_none() {
                return Err(Error::MissingTile { row: r, col: c });
            }
        }
    }
    let t0 = grid.tile(0, 0);
    let (tw, th) = (t0.width, t0.height);
    let px_w = t0.bbox.width() / tw as f64;
    let px_h = t0.bbox.height() / th as f64;
    let origin = GeoPoint::new(t0.bbox.min.x, t0.bbox.max.y); // north-west corner
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let t = grid.tile(r, c);
            let expect_x = origin.x + c as f64 * t0.bbox.width();
            let expect_y = origin.y - r as f64 * t0.bbox.height();
            let tol = 1e-6 * px_w.min(px_h);
            if t.width != tw
                || t.height != th
                || (t.bbox.min.x - expect_x).abs() > tol.max(1e-12)
                || (t.bbox.max.y - expect_y).abs() > tol.max(1e-12)
            {
                return Err(Error::InvalidGeometry(format!(
                    "tile ({r}, {c}) is not contiguous with the mosaic"
                )));
            }
        }
    }
    let mosaic_w = grid.cols * tw;
    let mosaic_h = grid.rows * th;
    let out_w = (window_deg / px_w).round() as usize;
    let out_h = (window_deg / px_h).round() as usize;
    if out_w == 0 || out_h == 0 || out_w > mosaic_w || out_h > mosaic_h {
        return Err(Error::Config(format!(
            "crop window of {out_w}x{out_h} px does not fit a {mosaic_w}x{mosaic_h} mosaic"
        )));
    }
    let want_col = ((center.x - window_deg / 2.0 - origin.x) / px_w).round();
    let want_row = ((origin.y - (center.y + window_deg / 2.0)) / px_h).round();
    let max_col = (mosaic_w - out_w) as f64;
    let max_row = (mosaic_h - out_h) as f64;
    let col0 = want_col.clamp(0.0, max_col);
    let row0 = want_row.clamp(0.0, max_row);
    let clamped = col0 != want_col || row0 != want_row;
    let (col0, row0) = (col0 as usize, row0 as usize);

    let mut pixels = Vec::with_capacity(out_w * out_h * 3);
    let mut ids = std::collections::BTreeSet::new();
    for r in row0..row0 + out_h {
        for c in col0..col0 + out_w {
            let (tr, tc) = (r / th, c / tw);
            let (entry_id, tile) = grid.tiles[tr * grid.cols + tc].as_ref().expect("validated");
            ids.insert(entry_id.clone());
            pixels.extend_from_slice(&tile.pixel(c % tw, r % th));
        }
    }
    let bbox = BBox::new(
        GeoPoint::new(origin.x + col0 as f64 * px_w, origin.y - (row0 + out_h) as f64 * px_h),
        GeoPoint::new(origin.x + (col0 + out_w) as f64 * px_w, origin.y - row0 as f64 * px_h),
    )?;
    let meta = PatchMeta { tile_ids: ids.into_iter().collect(), clamped };
    Ok(RasterPatch::new(out_w, out_h, pixels, bbox)?.with_meta(meta))
}
