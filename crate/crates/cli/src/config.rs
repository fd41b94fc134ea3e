//! JSON run configuration: defaults, then the config file, then flags.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use aoi_core::model::{ModelConfig, TrainOptions};
use aoi_core::reliability::CascadeConfig;
use aoi_core::synthgen::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::{Common, ModelArgs};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub cascade: CascadeConfig,
}

impl RunConfig {
    pub fn load(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => read(path)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            cfg.world.seed = seed;
            cfg.model.seed = seed;
            cfg.train.seed = seed;
            cfg.cascade.seed = seed;
        }
        Ok(cfg)
    }

    pub fn apply_model_args(&mut self, args: &ModelArgs) {
        if let Some(n) = args.n_points {
            self.model.n_points = n;
        }
        if let Some(d) = args.d_model {
            self.model.d_model = d;
        }
        if let Some(e) = args.epochs {
            self.train.epochs = e;
        }
    }
}

fn read(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
