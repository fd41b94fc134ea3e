//! Raster files: PNG or binary PPM (P6) plus a JSON sidecar with the bbox.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PatchMeta, RasterPatch};
use crate::error::{Error, Result};
use crate::geo::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Png,
    Ppm,
}

impl RasterFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::Png => "png",
            RasterFormat::Ppm => "ppm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub bbox: BBox,
    #[serde(default)]
    pub meta: PatchMeta,
}

pub fn write_ppm(path: &Path, patch: &RasterPatch) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", patch.width(), patch.height())?;
    f.write_all(patch.pixels())?;
    Ok(())
}

/// Parse a binary PPM; returns `(width, height, rgb bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if fields[0] != "P6" {
        return Err(Error::Format(format!("unsupported PPM magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} is not 255")));
    }
    let data = bytes.get(pos..pos + w * h * 3).ok_or_else(|| Error::Format("truncated PPM raster".into()))?;
    Ok((w, h, data.to_vec()))
}

fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

/// Write `<stem>.<png|ppm>` and `<stem>.json` into `dir`; returns the image path.
pub fn write_patch(dir: &Path, stem: &str, patch: &RasterPatch, format: RasterFormat) -> Result<PathBuf> {
    let image = dir.join(format!("{stem}.{}", format.extension()));
    match format {
        RasterFormat::Ppm => write_ppm(&image, patch)?,
        RasterFormat::Png => image::save_buffer_with_format(
            &image,
            patch.pixels(),
            patch.width() as u32,
            patch.height() as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?,
    }
    let sidecar = RasterSidecar {
        image: image.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        width: patch.width(),
        height: patch.height(),
        bbox: patch.bbox,
        meta: patch.meta.clone(),
    };
    fs::write(sidecar_path(&image), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(image)
}

/// Read an image written by [`write_patch`] together with its sidecar.
pub fn read_patch(image_path: &Path) -> Result<RasterPatch> {
    let sidecar: RasterSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(image_path))?)?;
    let (w, h, pixels) = match image_path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(image_path)?,
        Some("png") => {
            let img = image::open(image_path)?.into_rgb8();
            (img.width() as usize, img.height() as usize, img.into_raw())
        }
        other => return Err(Error::Format(format!("unknown raster extension {other:?}"))),
    };
    if (w, h) != (sidecar.width, sidecar.height) {
        return Err(Error::Format(format!(
            "raster is {w}x{h} but the sidecar says {}x{}",
            sidecar.width, sidecar.height
        )));
    }
    Ok(RasterPatch::new(w, h, pixels, sidecar.bbox)?.with_meta(sidecar.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn patch() -> RasterPatch {
        let bbox = BBox::new(GeoPoint::new(121.123456789, 31.1), GeoPoint::new(121.129456789, 31.106)).unwrap();
        let pixels = (0..7 * 5 * 3).map(|i| (i * 37 % 256) as u8).collect();
        RasterPatch::new(7, 5, pixels, bbox).unwrap().with_meta(PatchMeta { tile_ids: vec!["a".into()], clamped: true })
    }

    #[test]
    fn png_and_ppm_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for fmt in [RasterFormat::Png, RasterFormat::Ppm] {
            let p = patch();
            let path = write_patch(dir.path(), "raster", &p, fmt).unwrap();
            let back = read_patch(&path).unwrap();
            assert_eq!(back, p, "{fmt:?}");
        }
    }

    #[test]
    fn ppm_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        fs::write(&path, b"P3\n1 1\n255\n0 0 0").unwrap();
        assert!(read_ppm(&path).is_err());
    }
}
