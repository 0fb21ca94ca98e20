//! Synthetic stand-in dataset: each class has its own base color and stripe
//! texture, so classes are separable by mean color alone.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;

use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, RangeTag};
use crate::rng::{stream_rng, Stream};

const MAX_CLASSES: usize = 64;
const STRIPE_AMPLITUDE: f64 = 0.08;
const NOISE_AMPLITUDE: f64 = 0.03;

fn levels_per_channel(num_classes: usize) -> usize {
    let mut k = 2;
    while k * k * k < num_classes {
        k += 1;
    }
    k
}

/// Base RGB color of every class. Colors are distinct points of a k x k x k
/// lattice over [0.15, 0.85], visited with a stride coprime to k^3 so nearby
/// class ids get dissimilar colors.
pub fn class_colors(num_classes: usize) -> Vec<[f64; 3]> {
    let k = levels_per_channel(num_classes);
    let cells = k * k * k;
    let stride = (2..cells).rev().find(|s| gcd(*s, cells) == 1 && s * 3 < cells * 2).unwrap_or(1);
    let level = |i: usize| 0.15 + 0.7 * i as f64 / (k - 1) as f64;
    (0..num_classes)
        .map(|c| {
            let cell = (c * stride) % cells;
            [level(cell % k), level((cell / k) % k), level(cell / (k * k))]
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Renders sample `index` of class `class_id`.
pub fn synth_image(num_classes: usize, class_id: usize, index: usize, size: usize, seed: u64) -> ImageTensor {
    let base = class_colors(num_classes)[class_id];
    let mut rng = stream_rng(seed, Stream::Synth, &[class_id as u64, index as u64]);
    let angle = std::f64::consts::PI * class_id as f64 / num_classes as f64;
    let freq = 2.0 + (class_id % 3) as f64;
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let (sin, cos) = angle.sin_cos();
    let mut data = Array3::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let t = (x as f64 * cos + y as f64 * sin) / size as f64;
            let stripe = STRIPE_AMPLITUDE * (std::f64::consts::TAU * freq * t + phase).sin();
            for c in 0..3 {
                let noise = NOISE_AMPLITUDE * (2.0 * rng.random::<f64>() - 1.0);
                data[[y, x, c]] = (base[c] + stripe + noise).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor {
        data,
        range: RangeTag::Raw01,
    }
}

pub fn class_name(class_id: usize) -> String {
    format!("class_{class_id:02}")
}

/// Writes `root/class_XX/img_YYY.ppm` for every class and sample, returning
/// the manifest in load order.
pub fn synth_dataset(root: &Path, num_classes: usize, per_class: usize, image_size: usize, seed: u64) -> Result<DatasetManifest> {
    if !(2..=MAX_CLASSES).contains(&num_classes) {
        return Err(Error::InvalidConfig(format!(
            "synthetic datasets support 2..={MAX_CLASSES} classes, got {num_classes}"
        )));
    }
    if per_class == 0 || image_size == 0 {
        return Err(Error::InvalidConfig("per_class and image_size must be positive".into()));
    }
    let mut entries = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let dir = root.join(class_name(c));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(format!("img_{i:03}.ppm"));
            synth_image(num_classes, c, i, image_size, seed).save(&path)?;
            entries.push(ManifestEntry { path, class_id: c });
        }
    }
    Ok(DatasetManifest {
        entries,
        class_names: (0..num_classes).map(class_name).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_dataset;

    #[test]
    fn colors_are_separated() {
        for n in [2, 12, 27, 64] {
            let colors = class_colors(n);
            for a in 0..n {
                for b in a + 1..n {
                    let gap = (0..3).map(|c| (colors[a][c] - colors[b][c]).abs()).fold(0.0, f64::max);
                    assert!(gap >= 0.2, "{n} classes: {a} vs {b} gap {gap}");
                }
            }
        }
    }

    #[test]
    fn twelve_by_eight_layout_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = synth_dataset(a.path(), 12, 8, 24, 3).unwrap();
        synth_dataset(b.path(), 12, 8, 24, 3).unwrap();
        assert_eq!(m.len(), 96);
        assert_eq!(m.counts(), vec![8; 12]);
        let loaded = load_dataset(a.path()).unwrap();
        assert_eq!(loaded, m);
        for e in &m.entries {
            let rel = e.path.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&e.path).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(synth_dataset(tmp.path(), 1, 4, 8, 0).is_err());
        assert!(synth_dataset(tmp.path(), 3, 0, 8, 0).is_err());
    }
}
