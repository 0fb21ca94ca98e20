//! The full classifier: embedding, hierarchical stages, final norm and head.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::embed::{EmbedCache, PatchEmbed, TokenSequence};
use super::head::{classify, ClassifierHead};
use super::ops::{LayerNorm, LayerNormCache};
use super::params::{impl_parameters, Parameters};
use super::stage::{Stage, StageCache};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct GcVit {
    pub config: ModelConfig,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
    pub final_norm: LayerNorm,
    pub head: ClassifierHead,
}

impl_parameters!(GcVit { embed, stages, final_norm, head });

pub struct ForwardCache {
    embed: EmbedCache,
    stages: Vec<StageCache>,
    final_norm: LayerNormCache,
    z_cls: Array1<f64>,
}

impl GcVit {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init, &[]);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embed = PatchEmbed::init(rng, &config)?;
        let n = config.num_stages();
        let stages = (0..n)
            .map(|s| {
                let next = (s + 1 < n).then(|| config.stage_dims[s + 1]);
                Stage::init(rng, config.stage_depths[s], config.stage_dims[s], next, config.mlp_ratio)
            })
            .collect();
        let last = config.stage_dims[n - 1];
        Ok(Self {
            embed,
            stages,
            final_norm: LayerNorm::new(last),
            head: ClassifierHead::init(rng, last, config.num_classes),
            config,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Token sequences after the embedding and after each stage.
    pub fn feature_chain(&self, image: &ImageTensor) -> Result<Vec<TokenSequence>> {
        let (mut seq, _) = self.embed.forward(image, &self.config)?;
        let mut chain = vec![seq.clone()];
        for (s, stage) in self.stages.iter().enumerate() {
            seq = stage.forward(&seq, self.config.num_heads[s])?.0;
            chain.push(seq.clone());
        }
        Ok(chain)
    }

    pub fn forward_train(&self, image: &ImageTensor) -> Result<(Array1<f64>, ForwardCache)> {
        let (mut seq, embed) = self.embed.forward(image, &self.config)?;
        let mut caches = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let (next, c) = stage.forward(&seq, self.config.num_heads[s])?;
            seq = next;
            caches.push(c);
        }
        let cls = seq.cls().insert_axis(Axis(0));
        let (normed, final_norm) = self.final_norm.forward(&cls);
        let z_cls = normed.row(0).to_owned();
        let logits = self.head.logits(&z_cls)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model logits".into()));
        }
        Ok((
            logits,
            ForwardCache {
                embed,
                stages: caches,
                final_norm,
                z_cls,
            },
        ))
    }

    pub fn logits(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        Ok(self.forward_train(image)?.0)
    }

    /// Class probabilities for one preprocessed image.
    pub fn forward(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        let (_, cache) = self.forward_train(image)?;
        classify(&cache.z_cls, &self.head)
    }

    /// Accumulates parameter gradients of a scalar loss given dL/dlogits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array1<f64>, grad: &mut GcVit) {
        let dz = self.head.backward(&cache.z_cls, dlogits, &mut grad.head);
        let dcls = self
            .final_norm
            .backward(&cache.final_norm, &dz.insert_axis(Axis(0)), &mut grad.final_norm);
        let last = self.stages.len() - 1;
        let (h, w) = self.config.stage_grids().expect("validated config")[last];
        let mut d = Array2::zeros((h * w + 1, dcls.ncols()));
        d.row_mut(0).assign(&dcls.row(0));
        for ((stage, c), g) in self.stages.iter().zip(&cache.stages).zip(grad.stages.iter_mut()).rev() {
            d = stage.backward(c, &d, g);
        }
        self.embed.backward(&cache.embed, &d, &self.config, &mut grad.embed);
    }

    pub fn gradient_buffer(&self) -> GcVit {
        self.zeros_like()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RangeTag;
    use ndarray::Array3;

    fn test_image(cfg: &ModelConfig, seed: f64) -> ImageTensor {
        let (h, w) = cfg.input_size;
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| (y as f64 * 0.37 + x as f64 * 0.11 + c as f64 + seed).sin());
        ImageTensor::new(data, RangeTag::Normalized).unwrap()
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let cfg = ModelConfig::desk_tiny(12);
        let model = GcVit::init(cfg.clone(), 5).unwrap();
        let img = test_image(&cfg, 0.3);
        let a = model.forward(&img).unwrap();
        let b = model.forward(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!((a.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::desk_tiny(4);
        assert_eq!(GcVit::init(cfg.clone(), 1).unwrap(), GcVit::init(cfg.clone(), 1).unwrap());
        assert_ne!(GcVit::init(cfg.clone(), 1).unwrap(), GcVit::init(cfg, 2).unwrap());
    }

    #[test]
    fn feature_chain_shapes() {
        let cfg = ModelConfig::desk_tiny(3);
        let model = GcVit::init(cfg.clone(), 0).unwrap();
        let chain = model.feature_chain(&test_image(&cfg, 0.0)).unwrap();
        let shapes: Vec<_> = chain.iter().map(|s| (s.grid, s.tokens.dim())).collect();
        assert_eq!(shapes, vec![((8, 8), (65, 32)), ((4, 4), (17, 64)), ((4, 4), (17, 64))]);
    }
}
