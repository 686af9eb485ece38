//! Synthetic datasets, point-cloud files, manifests and resampling.

pub mod format;
pub mod manifest;
pub mod resample;
pub mod synthetic;

pub use format::{read_cloud, write_cloud, CloudFormat};
pub use manifest::{generate_synthetic, load_dataset, synthetic_dataset, Dataset, DatasetManifest};
pub use resample::resample_to_n;
pub use synthetic::{ShapeClass, Split, SyntheticConfig};
