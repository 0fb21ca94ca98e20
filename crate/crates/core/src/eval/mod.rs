//! Metrics, evaluation of a model on a manifest, and artifact export.

pub mod export;
pub mod metrics;

use rayon::prelude::*;

pub use export::{export, read_confusion};
pub use metrics::{
    confusion_matrix, default_class_names, per_class_accuracy, report, Averages, ClassMetrics, ClassificationReport,
    ConfusionMatrix,
};

use crate::data::augment::{preprocess_eval, AugmentPolicy};
use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{argmax, GcVit};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub matrix: ConfusionMatrix,
    pub report: ClassificationReport,
}

/// Top-1 predictions for raw images under the evaluation transform.
pub fn predict_all(model: &GcVit, images: &[ImageTensor], policy: &AugmentPolicy) -> Result<Vec<usize>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let input = preprocess_eval(img, policy)?;
            let logits = model
                .logits(&input)
                .map_err(|e| Error::Dataset(format!("sample {i}: {e}")))?;
            Ok(argmax(&logits))
        })
        .collect()
}

/// Scores already-decoded images against their labels.
pub fn evaluate_images(
    model: &GcVit,
    images: &[ImageTensor],
    labels: &[usize],
    class_names: Vec<String>,
    policy: &AugmentPolicy,
) -> Result<Evaluation> {
    if class_names.len() != model.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} classes but the data has {}",
            model.num_classes(),
            class_names.len()
        )));
    }
    let predictions = predict_all(model, images, policy)?;
    let matrix = confusion_matrix(&predictions, labels, class_names)?;
    let report = report(&matrix)?;
    Ok(Evaluation {
        predictions,
        matrix,
        report,
    })
}

/// Decodes, preprocesses and classifies every manifest entry.
pub fn evaluate(model: &GcVit, manifest: &DatasetManifest, policy: &AugmentPolicy) -> Result<Evaluation> {
    if manifest.num_classes() != model.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} classes but the manifest has {}",
            model.num_classes(),
            manifest.num_classes()
        )));
    }
    let images: Vec<ImageTensor> = manifest
        .entries
        .par_iter()
        .map(|e| {
            ImageTensor::load(&e.path).map_err(|err| match err {
                Error::Decode { .. } | Error::Io { .. } => err,
                other => Error::Dataset(format!("{}: {other}", e.path.display())),
            })
        })
        .collect::<Result<_>>()?;
    evaluate_images(model, &images, &manifest.labels(), manifest.class_names.clone(), policy)
}
