//! Training augmentation, evaluation preprocessing and channel normalization.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, RangeTag};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Random-area crops keep their aspect ratio inside this range.
const CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const CROP_ATTEMPTS: usize = 10;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterLimits {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub crop_size: usize,
    pub scale_range: [f64; 2],
    /// Degrees.
    pub max_rotation: f64,
    pub hflip_prob: f64,
    pub jitter_limits: JitterLimits,
    pub normalization_mean: [f64; 3],
    pub normalization_std: [f64; 3],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            crop_size: 224,
            scale_range: [0.8, 1.0],
            max_rotation: 20.0,
            hflip_prob: 0.5,
            jitter_limits: JitterLimits {
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
            },
            normalization_mean: IMAGENET_MEAN,
            normalization_std: IMAGENET_STD,
        }
    }
}

impl AugmentPolicy {
    /// The default policy with a different output size.
    pub fn with_crop_size(crop_size: usize) -> Self {
        Self {
            crop_size,
            ..Self::default()
        }
    }

    /// Every random transform collapsed to the identity: training reduces to a resize.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            crop_size,
            scale_range: [1.0, 1.0],
            max_rotation: 0.0,
            hflip_prob: 0.0,
            jitter_limits: JitterLimits {
                brightness: 0.0,
                contrast: 0.0,
                saturation: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let [lo, hi] = self.scale_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("scale_range {:?} must satisfy 0 < low <= high <= 1", self.scale_range));
        }
        if self.crop_size == 0 {
            return bad("crop_size must be positive".into());
        }
        if self.max_rotation.is_nan() || self.max_rotation < 0.0 {
            return bad("max_rotation must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad(format!("hflip_prob {} must lie in [0, 1]", self.hflip_prob));
        }
        let j = self.jitter_limits;
        for (name, v) in [("brightness", j.brightness), ("contrast", j.contrast), ("saturation", j.saturation)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} jitter {v} must lie in [0, 1)"));
            }
        }
        if self.normalization_std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return bad("normalization std must be positive".into());
        }
        Ok(())
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.normalization_mean,
            std: self.normalization_std,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

/// Per-channel standardization `(x - mean_c) / std_c`.
pub fn normalize(image: &ImageTensor, norm: &Normalization) -> Result<ImageTensor> {
    if image.range == RangeTag::Normalized {
        return Err(Error::Range("image is already normalized".into()));
    }
    let mut data = image.data.clone();
    for ((_, _, c), v) in data.indexed_iter_mut() {
        *v = (*v - norm.mean[c]) / norm.std[c];
    }
    Ok(ImageTensor {
        data,
        range: RangeTag::Normalized,
    })
}

pub fn denormalize(image: &ImageTensor, norm: &Normalization) -> Result<ImageTensor> {
    if image.range != RangeTag::Normalized {
        return Err(Error::Range("image is not normalized".into()));
    }
    let mut data = image.data.clone();
    for ((_, _, c), v) in data.indexed_iter_mut() {
        *v = *v * norm.std[c] + norm.mean[c];
    }
    Ok(ImageTensor {
        data,
        range: RangeTag::Raw01,
    })
}

/// Deterministic evaluation path: resize to the crop size, then normalize.
pub fn preprocess_eval(image: &ImageTensor, policy: &AugmentPolicy) -> Result<ImageTensor> {
    normalize(&image.resize(policy.crop_size, policy.crop_size), &policy.normalization())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Chooses a crop window `(top, left, height, width)` covering a uniformly
/// drawn fraction of the image area.
fn crop_window<R: Rng + ?Sized>(h: usize, w: usize, scale: [f64; 2], rng: &mut R) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    for _ in 0..CROP_ATTEMPTS {
        let frac = uniform(rng, scale[0], scale[1]);
        let ratio = uniform(rng, CROP_RATIO.0.ln(), CROP_RATIO.1.ln()).exp();
        if frac >= 1.0 {
            return (0, 0, h, w);
        }
        let target = frac * area;
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    // central crop at the nearest admissible aspect ratio
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < CROP_RATIO.0 {
        (((w as f64 / CROP_RATIO.0).round() as usize).min(h), w)
    } else if in_ratio > CROP_RATIO.1 {
        (h, ((h as f64 * CROP_RATIO.1).round() as usize).min(w))
    } else {
        (h, w)
    };
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Rotates about the image center by `degrees` (counter-clockwise), filling
/// uncovered pixels with the per-channel mean.
pub fn rotate(image: &ImageTensor, degrees: f64) -> ImageTensor {
    if degrees == 0.0 {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let fill = image.channel_means();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut data = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            // inverse map: rotate the output coordinate back by -angle
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let inside = sy >= -0.5 && sy <= h as f64 - 0.5 && sx >= -0.5 && sx <= w as f64 - 0.5;
            let px = if inside { image.sample_bilinear(sy, sx) } else { fill };
            for c in 0..3 {
                data[[i, j, c]] = px[c];
            }
        }
    }
    ImageTensor {
        data,
        range: image.range,
    }
}

pub fn adjust_brightness(image: &mut ImageTensor, factor: f64) {
    image.data.mapv_inplace(|v| (v * factor).clamp(0.0, 1.0));
}

pub fn adjust_contrast(image: &mut ImageTensor, factor: f64) {
    let n = (image.height() * image.width()) as f64;
    let mut mean = 0.0;
    for px in image.data.lanes(ndarray::Axis(2)) {
        mean += LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
    }
    mean /= n;
    image.data.mapv_inplace(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0));
}

pub fn adjust_saturation(image: &mut ImageTensor, factor: f64) {
    for mut px in image.data.lanes_mut(ndarray::Axis(2)) {
        let gray = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
        px.mapv_inplace(|v| (gray + factor * (v - gray)).clamp(0.0, 1.0));
    }
}

/// Random-area crop and resize, horizontal flip, rotation, then brightness,
/// contrast and saturation jitter. Input and output are raw [0, 1] images.
pub fn augment_train<R: Rng + ?Sized>(image: &ImageTensor, policy: &AugmentPolicy, rng: &mut R) -> Result<ImageTensor> {
    policy.validate()?;
    if image.range != RangeTag::Raw01 {
        return Err(Error::Range("augmentation expects a raw [0, 1] image".into()));
    }
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 || policy.scale_range[0] * ((h * w) as f64) < 1.0 {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w} image is too small to crop at scale {}",
            policy.scale_range[0]
        )));
    }
    let window = crop_window(h, w, policy.scale_range, rng);
    let s = policy.crop_size;
    let mut out = if window == (0, 0, h, w) {
        image.resize(s, s)
    } else {
        image.crop_resize(window, s, s)
    };
    if rng.random::<f64>() < policy.hflip_prob {
        out = out.flip_horizontal();
    }
    let angle = uniform(rng, -policy.max_rotation, policy.max_rotation);
    out = rotate(&out, angle);
    let j = policy.jitter_limits;
    let b = uniform(rng, 1.0 - j.brightness, 1.0 + j.brightness);
    let c = uniform(rng, 1.0 - j.contrast, 1.0 + j.contrast);
    let sat = uniform(rng, 1.0 - j.saturation, 1.0 + j.saturation);
    if b != 1.0 {
        adjust_brightness(&mut out, b);
    }
    if c != 1.0 {
        adjust_contrast(&mut out, c);
    }
    if sat != 1.0 {
        adjust_saturation(&mut out, sat);
    }
    out.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Augments and normalizes one training sample.
pub fn train_transform<R: Rng + ?Sized>(image: &ImageTensor, policy: &AugmentPolicy, rng: &mut R) -> Result<ImageTensor> {
    normalize(&augment_train(image, policy, rng)?, &policy.normalization())
}
