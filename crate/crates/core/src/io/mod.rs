pub mod manifest;
pub mod netpbm;

pub use manifest::{DatasetManifest, ManifestEntry, SampleRasters};
pub use netpbm::{instances_from_index, Raster};
