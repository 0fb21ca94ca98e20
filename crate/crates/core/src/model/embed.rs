//! Convolutional stem, patchification and the CLS/positional tokens.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::ops::{gelu, gelu_grad, normal_vector, trunc_normal_matrix, Conv3x3, Geometry};
use super::params::impl_parameters;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, RangeTag};

/// Token matrix with the CLS token in row 0 followed by patch tokens in
/// row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub grid: (usize, usize),
}

impl TokenSequence {
    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn cls(&self) -> Array1<f64> {
        self.tokens.row(0).to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbed {
    pub stem1: Conv3x3,
    pub stem2: Conv3x3,
    /// Projection `E`, shape (D, P*P*stem_channels).
    pub proj: Array2<f64>,
    /// Positional encodings, one row per patch.
    pub pos: Array2<f64>,
    pub cls: Array1<f64>,
}

impl_parameters!(PatchEmbed { stem1, stem2, proj, pos, cls });

pub struct EmbedCache {
    cols1: Array2<f64>,
    pre1: Array2<f64>,
    cols2: Array2<f64>,
    pre2: Array2<f64>,
    patches: Array2<f64>,
}

impl PatchEmbed {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let n = cfg.num_patches()?;
        let sc = cfg.stem_channels;
        let p = cfg.patch_size;
        Ok(Self {
            stem1: Conv3x3::init(rng, 3, sc),
            stem2: Conv3x3::init(rng, sc, sc),
            proj: trunc_normal_matrix(rng, cfg.embed_dim, p * p * sc, 0.02),
            pos: Array2::from_shape_vec((n, cfg.embed_dim), normal_vector(rng, n * cfg.embed_dim, 0.02).to_vec())
                .expect("positional shape"),
            cls: normal_vector(rng, cfg.embed_dim, 0.02),
        })
    }

    fn geometry(cfg: &ModelConfig) -> Geometry {
        Geometry {
            height: cfg.input_size.0,
            width: cfg.input_size.1,
            stride: 1,
        }
    }

    pub fn forward(&self, image: &ImageTensor, cfg: &ModelConfig) -> Result<(TokenSequence, EmbedCache)> {
        let (h, w) = (image.height(), image.width());
        if image.range != RangeTag::Normalized {
            return Err(Error::Range("model input must be normalized".into()));
        }
        if (h, w) != cfg.input_size {
            return Err(Error::DimensionMismatch(format!(
                "image is {h}x{w}, model expects {}x{}",
                cfg.input_size.0, cfg.input_size.1
            )));
        }
        let grid = cfg.patch_grid()?;
        let geo = Self::geometry(cfg);
        let x = image.to_pixel_matrix();
        let (pre1, cols1) = self.stem1.forward(&x, geo);
        let (pre2, cols2) = self.stem2.forward(&pre1.mapv(gelu), geo);
        let feat = pre2.mapv(gelu);
        let patches = patchify(&feat, (h, w), cfg.patch_size);
        let d = cfg.embed_dim;
        let mut tokens = Array2::zeros((patches.nrows() + 1, d));
        tokens.row_mut(0).assign(&self.cls);
        tokens
            .slice_mut(s![1.., ..])
            .assign(&(patches.dot(&self.proj.t()) + &self.pos));
        Ok((
            TokenSequence { tokens, grid },
            EmbedCache {
                cols1,
                pre1,
                cols2,
                pre2,
                patches,
            },
        ))
    }

    pub fn backward(&self, cache: &EmbedCache, dtokens: &Array2<f64>, cfg: &ModelConfig, grad: &mut PatchEmbed) {
        grad.cls += &dtokens.row(0);
        let dpatch_tokens = dtokens.slice(s![1.., ..]);
        grad.pos += &dpatch_tokens;
        grad.proj += &dpatch_tokens.t().dot(&cache.patches);
        let dpatches = dpatch_tokens.dot(&self.proj);
        let dfeat = unpatchify(&dpatches, cfg.input_size, cfg.patch_size, cfg.stem_channels);
        let geo = Self::geometry(cfg);
        let dpre2 = dfeat * &cache.pre2.mapv(gelu_grad);
        let dact1 = self.stem2.backward(&cache.cols2, &dpre2, geo, &mut grad.stem2);
        let dpre1 = dact1 * &cache.pre1.mapv(gelu_grad);
        // the input image is not trainable; its gradient is discarded
        let _ = self.stem1.backward(&cache.cols1, &dpre1, geo, &mut grad.stem1);
    }
}

/// Splits an (H*W, C) map into non-overlapping P x P patches, each flattened
/// in (py, px, c) order.
pub fn patchify(feat: &Array2<f64>, (h, w): (usize, usize), p: usize) -> Array2<f64> {
    let c = feat.ncols();
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::zeros((gh * gw, p * p * c));
    for gy in 0..gh {
        for gx in 0..gw {
            let r = gy * gw + gx;
            for py in 0..p {
                for px in 0..p {
                    let src = (gy * p + py) * w + gx * p + px;
                    let off = (py * p + px) * c;
                    out.slice_mut(s![r, off..off + c]).assign(&feat.row(src));
                }
            }
        }
    }
    out
}

fn unpatchify(patches: &Array2<f64>, (h, w): (usize, usize), p: usize, c: usize) -> Array2<f64> {
    let gw = w / p;
    let mut out = Array2::zeros((h * w, c));
    for (r, row) in patches.rows().into_iter().enumerate() {
        let (gy, gx) = (r / gw, r % gw);
        for py in 0..p {
            for px in 0..p {
                let dst = (gy * p + py) * w + gx * p + px;
                let off = (py * p + px) * c;
                out.row_mut(dst).assign(&row.slice(s![off..off + c]));
            }
        }
    }
    out
}
