//! Dataset quality analytics over ground-truth rasters.

pub mod consistency;
pub mod distribution;
pub mod otsu;

use serde::{Deserialize, Serialize};

pub use consistency::{depth_saliency_consistency, object_instance_consistency, ConsistencyCurve, SampleOverlap};
pub use distribution::{center_bias, instance_size_distribution, CenterBias, SizeDistribution};
pub use otsu::{histogram, near_mask, otsu_threshold};

/// A sample left out of an aggregate, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

impl Skipped {
    pub fn new(name: &str, reason: impl Into<String>) -> Self {
        Self { name: name.to_string(), reason: reason.into() }
    }
}
