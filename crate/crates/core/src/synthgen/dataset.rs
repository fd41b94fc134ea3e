//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/samples/<id>/patch.png + patch.json      raster and bbox sidecar
//! <root>/samples/<id>/features.geojson            everything else, by `role`
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GeoSample, NeighborAoi, WorldConfig};
use crate::error::{Error, Result};
use crate::geo::geojson::{road_features, roads_from_features, Feature, FeatureCollection};
use crate::imagery::{read_patch, write_patch, RasterFormat, RasterPatch};
use crate::reliability::{LbsPoint, LogisticsRecord, Provenance, ReliabilityLabel};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "aoi-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: WorldConfig,
    pub splits: Splits,
}

/// A world with its train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: WorldConfig,
    pub train: Vec<GeoSample>,
    pub val: Vec<GeoSample>,
}

impl Dataset {
    /// Split generated samples: the last `val` samples are held out.
    pub fn from_world(config: WorldConfig, mut samples: Vec<GeoSample>) -> Self {
        let (train, _) = config.split();
        let val = samples.split_off(train.min(samples.len()));
        Self { config, train: samples, val }
    }

    pub fn generate(config: &WorldConfig) -> Result<Self> {
        Ok(Self::from_world(config.clone(), super::generate_world(config)?))
    }

    pub fn all(&self) -> impl Iterator<Item = &GeoSample> {
        self.train.iter().chain(&self.val)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config.clone(),
            splits: Splits {
                train: self.train.iter().map(|s| s.id).collect(),
                val: self.val.iter().map(|s| s.id).collect(),
            },
        }
    }

    /// Write the dataset below `root`, creating directories as needed.
    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        self.all().collect::<Vec<_>>().par_iter().try_for_each(|s| write_sample(root, s))?;
        fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Self> {
        let text = fs::read_to_string(root.join(MANIFEST))
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", root.join(MANIFEST).display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!("unsupported dataset {} v{}", manifest.format, manifest.version)));
        }
        let load = |ids: &[u64]| ids.par_iter().map(|&id| read_sample(root, id)).collect::<Result<Vec<_>>>();
        Ok(Self { train: load(&manifest.splits.train)?, val: load(&manifest.splits.val)?, config: manifest.config })
    }
}

pub fn sample_dir(root: &Path, id: u64) -> PathBuf {
    root.join("samples").join(format!("{id:06}"))
}

fn label_feature(f: Feature, label: ReliabilityLabel) -> Feature {
    f.with("reliable", label.reliable).with("provenance", label.provenance.as_str())
}

pub fn sample_features(s: &GeoSample) -> FeatureCollection {
    let mut fc = FeatureCollection::default();
    fc.push(Feature::polygon(&s.aoi).with("role", "aoi").with("sample_id", s.id));
    fc.push(label_feature(Feature::polygon(&s.candidate).with("role", "candidate"), s.label));
    fc.push(Feature::poi(&s.core).with("role", "core"));
    for e in &s.entrances {
        fc.push(Feature::poi(e).with("role", "entrance"));
    }
    for n in &s.neighbors {
        fc.push(Feature::poi(&n.core).with("role", "neighbor-core"));
        fc.push(Feature::polygon(&n.polygon).with("role", "neighbor").with("core_id", n.core.id));
    }
    for r in road_features(&s.roads) {
        fc.push(r);
    }
    for p in &s.lbs {
        fc.push(Feature::point(p.location).with("role", "lbs").with("t", p.timestamp));
    }
    for r in &s.logistics {
        fc.push(Feature::point(r.location).with("role", "logistics").with("poi_id", r.poi_id));
    }
    fc
}

fn write_sample(root: &Path, s: &GeoSample) -> Result<()> {
    let dir = sample_dir(root, s.id);
    fs::create_dir_all(&dir)?;
    write_patch(&dir, "patch", &s.patch, RasterFormat::Png)?;
    fs::write(dir.join("features.geojson"), sample_features(s).to_json()?)?;
    Ok(())
}

fn one<'a>(fc: &'a FeatureCollection, role: &'a str) -> Result<&'a Feature> {
    let mut it = fc.with_role(role);
    match (it.next(), it.next()) {
        (Some(f), None) => Ok(f),
        _ => Err(Error::Format(format!("expected exactly one {role:?} feature"))),
    }
}

/// Rebuild a sample from its feature collection and raster.
pub fn sample_from_features(fc: &FeatureCollection, patch: RasterPatch) -> Result<GeoSample> {
    let aoi_feature = one(fc, "aoi")?;
    let id = aoi_feature.prop_u64("sample_id").ok_or_else(|| Error::Format("aoi without sample_id".into()))?;
    let cand = one(fc, "candidate")?;
    let provenance = cand
        .prop_str("provenance")
        .and_then(Provenance::parse)
        .ok_or_else(|| Error::Format("candidate without a valid provenance".into()))?;
    let reliable = cand
        .properties
        .get("reliable")
        .and_then(serde_json::Value::as_bool)
        .ok_or_else(|| Error::Format("candidate without reliable flag".into()))?;
    let neighbor_cores = fc.with_role("neighbor-core").map(Feature::as_poi).collect::<Result<Vec<_>>>()?;
    let neighbors = fc
        .with_role("neighbor")
        .map(|f| {
            let core_id = f.prop_u64("core_id");
            let core = neighbor_cores
                .iter()
                .find(|c| Some(c.id) == core_id)
                .ok_or_else(|| Error::Format(format!("neighbor polygon refers to unknown core {core_id:?}")))?;
            Ok(NeighborAoi { core: core.clone(), polygon: f.as_polygon()? })
        })
        .collect::<Result<Vec<_>>>()?;
    let lbs = fc
        .with_role("lbs")
        .map(|f| {
            let t = f.properties.get("t").and_then(serde_json::Value::as_i64);
            Ok(LbsPoint { location: f.as_point()?, timestamp: t.ok_or_else(|| Error::Format("LBS point without t".into()))? })
        })
        .collect::<Result<Vec<_>>>()?;
    let logistics = fc
        .with_role("logistics")
        .map(|f| {
            let poi_id = f.prop_u64("poi_id").ok_or_else(|| Error::Format("logistics record without poi_id".into()))?;
            Ok(LogisticsRecord { poi_id, location: f.as_point()? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeoSample {
        id,
        core: one(fc, "core")?.as_poi()?,
        aoi: aoi_feature.as_polygon()?,
        candidate: cand.as_polygon()?,
        label: ReliabilityLabel { reliable, provenance },
        bbox: patch.bbox,
        patch,
        roads: roads_from_features(fc.with_role("road"))?,
        entrances: fc.with_role("entrance").map(Feature::as_poi).collect::<Result<Vec<_>>>()?,
        neighbors,
        lbs,
        logistics,
    })
}

pub fn read_sample(root: &Path, id: u64) -> Result<GeoSample> {
    let dir = sample_dir(root, id);
    let fc = FeatureCollection::from_json(&fs::read_to_string(dir.join("features.geojson"))?)?;
    let patch = read_patch(&dir.join("patch.png"))?;
    let s = sample_from_features(&fc, patch)?;
    if s.id != id {
        return Err(Error::Format(format!("{} holds sample {}", dir.display(), s.id)));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorldConfig {
        WorldConfig { samples: 6, image_size: 32, lbs_points: 20, logistics_records: 5, ..WorldConfig::default() }
    }

    #[test]
    fn round_trip_is_lossless() {
        let ds = Dataset::generate(&cfg()).unwrap();
        assert_eq!((ds.train.len(), ds.val.len()), (5, 1));
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn writes_are_byte_identical() {
        let ds = Dataset::generate(&cfg()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        ds.write(a.path()).unwrap();
        Dataset::generate(&cfg()).unwrap().write(b.path()).unwrap();
        for rel in ["manifest.json", "samples/000003/features.geojson", "samples/000003/patch.png"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(Error::Format(_))));
    }
}
