//! Cascaded reliability scoring of a candidate AOI polygon.

mod cascade;
mod features;
mod metrics;

pub use cascade::{cross_val_scores, Cascade, CascadeConfig};
pub use features::{
    basic_features, extract_features, feature_beta, feature_delta, feature_partial, features_csv, flow_histogram,
    BasicFeatures, BetaFeature, FlowHistogram, ReliabilityFeatures,
};
pub use metrics::{auc, pr_csv, pr_curve, pr_threshold, PrPoint, ThresholdReport};

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

/// A timestamped user location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbsPoint {
    pub location: GeoPoint,
    /// Unix seconds.
    pub timestamp: i64,
}

/// A delivery address resolved to one of the core POI's child POIs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticsRecord {
    pub poi_id: u64,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LibraryPositive,
    ExpiredNegative,
    LowIouNegative,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::LibraryPositive => "library-positive",
            Provenance::ExpiredNegative => "expired-negative",
            Provenance::LowIouNegative => "low-iou-negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Provenance::LibraryPositive, Provenance::ExpiredNegative, Provenance::LowIouNegative]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityLabel {
    pub reliable: bool,
    pub provenance: Provenance,
}

impl ReliabilityLabel {
    pub fn positive() -> Self {
        Self { reliable: true, provenance: Provenance::LibraryPositive }
    }
}
