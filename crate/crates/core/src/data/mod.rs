//! Dataset ingestion, splitting, augmentation and synthetic data.

pub mod augment;
pub mod manifest;
pub mod split;
pub mod synth;

use rayon::prelude::*;

pub use augment::{
    augment_train, denormalize, normalize, preprocess_eval, train_transform, AugmentPolicy, JitterLimits, Normalization,
};
pub use manifest::{load_dataset, DatasetManifest, ManifestEntry};
pub use split::{stratified_split, SplitSpec};
pub use synth::synth_dataset;

use crate::error::Result;
use crate::image::ImageTensor;

/// Decodes every image of a manifest; the first failure names its file.
pub fn decode_all(manifest: &DatasetManifest) -> Result<Vec<ImageTensor>> {
    manifest
        .entries
        .par_iter()
        .map(|e| ImageTensor::load(&e.path))
        .collect()
}
