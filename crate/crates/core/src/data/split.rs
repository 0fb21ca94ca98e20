//! Stratified train/validation splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

/// Number of training samples per class.
///
/// The overall training total is fixed first as `floor(f * n)`; classes then
/// receive `floor(f * n_c)` each and the leftover slots go to the classes with
/// the largest fractional remainders (ties to the lower class id). Every class
/// ends within one sample of `f * n_c`.
pub fn train_allocation(counts: &[usize], train_fraction: f64) -> Vec<usize> {
    const SLACK: f64 = 1e-9;
    let total: usize = counts.iter().sum();
    let target = (train_fraction * total as f64 + SLACK).floor() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&n| train_fraction * n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| (q + SLACK).floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let remainder = |c: usize| quotas[c] - alloc[c] as f64;
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        if alloc[c] < counts[c] {
            alloc[c] += 1;
        }
    }
    alloc
}

/// Splits a manifest into (train, val). Membership depends only on the seed;
/// each subset keeps the input ordering.
pub fn stratified_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    manifest.validate()?;
    let counts = manifest.counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Dataset(format!("class {} has no samples", manifest.class_names[c])));
    }
    let mut in_train = vec![false; manifest.len()];
    if spec.stratified {
        let alloc = train_allocation(&counts, spec.train_fraction);
        for (c, &take) in alloc.iter().enumerate() {
            let mut idx: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.entries[i].class_id == c).collect();
            idx.shuffle(&mut stream_rng(spec.seed, Stream::Split, &[c as u64]));
            for &i in &idx[..take] {
                in_train[i] = true;
            }
        }
    } else {
        let take = (spec.train_fraction * manifest.len() as f64 + 1e-9).floor() as usize;
        let mut idx: Vec<usize> = (0..manifest.len()).collect();
        idx.shuffle(&mut stream_rng(spec.seed, Stream::Split, &[u64::MAX]));
        for &i in &idx[..take] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..manifest.len()).filter(|&i| in_train[i]).collect();
    let val: Vec<usize> = (0..manifest.len()).filter(|&i| !in_train[i]).collect();
    Ok((manifest.subset(&train), manifest.subset(&val)))
}
