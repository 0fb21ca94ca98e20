//! Transformer blocks and hierarchical stages.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::attention::{gc_attention, gc_attention_backward, AttentionCache, AttentionParams};
use super::embed::TokenSequence;
use super::ops::{gelu, gelu_grad, Conv3x3, Geometry, LayerNorm, LayerNormCache, Linear};
use super::params::impl_parameters;
use crate::config::halve_grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl_parameters!(Mlp { fc1, fc2 });

/// Pre-norm block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: AttentionParams,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl_parameters!(Block { norm1, attn, norm2, mlp });

pub struct BlockCache {
    h1: Array2<f64>,
    ln1: LayerNormCache,
    attn: AttentionCache,
    h2: Array2<f64>,
    ln2: LayerNormCache,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, mlp_ratio: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: AttentionParams::init(rng, dim),
            norm2: LayerNorm::new(dim),
            mlp: Mlp {
                fc1: Linear::init(rng, dim, dim * mlp_ratio),
                fc2: Linear::init(rng, dim * mlp_ratio, dim),
            },
        }
    }

    pub fn forward(&self, x: &Array2<f64>, num_heads: usize) -> Result<(Array2<f64>, BlockCache)> {
        let (h1, ln1) = self.norm1.forward(x);
        let (a, attn) = gc_attention(&h1, &self.attn, num_heads)?;
        let x1 = x + &a;
        let (h2, ln2) = self.norm2.forward(&x1);
        let pre = self.mlp.fc1.forward(&h2);
        let act = pre.mapv(gelu);
        let out = &x1 + &self.mlp.fc2.forward(&act);
        Ok((
            out,
            BlockCache {
                h1,
                ln1,
                attn,
                h2,
                ln2,
                pre,
                act,
            },
        ))
    }

    pub fn backward(&self, cache: &BlockCache, dout: &Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let dact = self.mlp.fc2.backward(&cache.act, dout, &mut grad.mlp.fc2);
        let dpre = dact * &cache.pre.mapv(gelu_grad);
        let dh2 = self.mlp.fc1.backward(&cache.h2, &dpre, &mut grad.mlp.fc1);
        let dx1 = dout + &self.norm2.backward(&cache.ln2, &dh2, &mut grad.norm2);
        let dh1 = gc_attention_backward(&cache.h1, &self.attn, &cache.attn, &dx1, &mut grad.attn);
        &dx1 + &self.norm1.backward(&cache.ln1, &dh1, &mut grad.norm1)
    }
}

/// Stride-2 convolution over the patch grid; the CLS token is projected only
/// when the dimension changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsample {
    pub conv: Conv3x3,
    pub cls_proj: Option<Linear>,
}

impl_parameters!(Downsample { conv, cls_proj });

pub struct DownsampleCache {
    cols: Array2<f64>,
    cls: Array1<f64>,
    geo: Geometry,
}

impl Downsample {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, din: usize, dout: usize) -> Self {
        Self {
            conv: Conv3x3::init(rng, din, dout),
            cls_proj: (din != dout).then(|| Linear::init(rng, din, dout)),
        }
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<(TokenSequence, DownsampleCache)> {
        let grid = halve_grid(seq.grid)?;
        let geo = Geometry {
            height: seq.grid.0,
            width: seq.grid.1,
            stride: 2,
        };
        let patches = seq.tokens.slice(s![1.., ..]).to_owned();
        let (down, cols) = self.conv.forward(&patches, geo);
        let cls = seq.cls();
        let cls_out = match &self.cls_proj {
            Some(lin) => lin.forward(&cls.clone().insert_axis(ndarray::Axis(0))).row(0).to_owned(),
            None => cls.clone(),
        };
        let mut tokens = Array2::zeros((down.nrows() + 1, down.ncols()));
        tokens.row_mut(0).assign(&cls_out);
        tokens.slice_mut(s![1.., ..]).assign(&down);
        Ok((TokenSequence { tokens, grid }, DownsampleCache { cols, cls, geo }))
    }

    pub fn backward(&self, cache: &DownsampleCache, dout: &Array2<f64>, grad: &mut Downsample) -> Array2<f64> {
        let dpatches = self
            .conv
            .backward(&cache.cols, &dout.slice(s![1.., ..]).to_owned(), cache.geo, &mut grad.conv);
        let dcls_out = dout.row(0).to_owned().insert_axis(ndarray::Axis(0));
        let dcls = match (&self.cls_proj, &mut grad.cls_proj) {
            (Some(lin), Some(g)) => lin.backward(&cache.cls.clone().insert_axis(ndarray::Axis(0)), &dcls_out, g),
            _ => dcls_out,
        };
        let mut dx = Array2::zeros((dpatches.nrows() + 1, dpatches.ncols()));
        dx.row_mut(0).assign(&dcls.row(0));
        dx.slice_mut(s![1.., ..]).assign(&dpatches);
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub blocks: Vec<Block>,
    pub downsample: Option<Downsample>,
}

impl_parameters!(Stage { blocks, downsample });

pub struct StageCache {
    inputs: Vec<Array2<f64>>,
    blocks: Vec<BlockCache>,
    down: Option<DownsampleCache>,
}

impl Stage {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, depth: usize, dim: usize, next_dim: Option<usize>, mlp_ratio: usize) -> Self {
        Self {
            blocks: (0..depth).map(|_| Block::init(rng, dim, mlp_ratio)).collect(),
            downsample: next_dim.map(|nd| Downsample::init(rng, dim, nd)),
        }
    }

    pub fn dim(&self) -> usize {
        match (self.blocks.first(), &self.downsample) {
            (Some(b), _) => b.attn.dim(),
            (None, Some(d)) => d.conv.in_channels(),
            (None, None) => 0,
        }
    }

    /// Runs every block, then the downsampling if present.
    pub fn forward(&self, seq: &TokenSequence, num_heads: usize) -> Result<(TokenSequence, StageCache)> {
        if seq.tokens.nrows() != seq.num_patches() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens do not match grid {:?} plus CLS",
                seq.tokens.nrows(),
                seq.grid
            )));
        }
        let mut x = seq.tokens.clone();
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&x, num_heads)?;
            inputs.push(x);
            caches.push(c);
            x = y;
        }
        let mut out = TokenSequence { tokens: x, grid: seq.grid };
        let mut down = None;
        if let Some(ds) = &self.downsample {
            let (o, c) = ds.forward(&out)?;
            out = o;
            down = Some(c);
        }
        Ok((
            out,
            StageCache {
                inputs,
                blocks: caches,
                down,
            },
        ))
    }

    pub fn backward(&self, cache: &StageCache, dout: &Array2<f64>, grad: &mut Stage) -> Array2<f64> {
        let mut d = dout.clone();
        if let (Some(ds), Some(c), Some(g)) = (&self.downsample, &cache.down, &mut grad.downsample) {
            d = ds.backward(c, &d, g);
        }
        for ((block, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            d = block.backward(c, &d, g);
        }
        debug_assert_eq!(cache.inputs.len(), self.blocks.len());
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(grid: (usize, usize), dim: usize) -> TokenSequence {
        TokenSequence {
            tokens: Array2::from_shape_fn((grid.0 * grid.1 + 1, dim), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0),
            grid,
        }
    }

    #[test]
    fn downsampling_halves_grid_and_maps_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = Stage::init(&mut rng, 1, 16, Some(32), 4);
        let (out, _) = st.forward(&seq((4, 6), 16), 2).unwrap();
        assert_eq!(out.grid, (2, 3));
        assert_eq!(out.tokens.dim(), (7, 32));
    }

    #[test]
    fn depth_zero_stage_only_downsamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = Stage::init(&mut rng, 0, 16, Some(16), 4);
        let input = seq((4, 4), 16);
        let (out, _) = st.forward(&input, 2).unwrap();
        assert_eq!(out.grid, (2, 2));
        // equal dims: CLS carried unchanged
        assert_eq!(out.cls(), input.cls());
    }

    #[test]
    fn odd_grid_cannot_downsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = Stage::init(&mut rng, 1, 8, Some(16), 4);
        assert!(matches!(st.forward(&seq((3, 4), 8), 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn final_stage_keeps_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = Stage::init(&mut rng, 2, 8, None, 4);
        let (out, _) = st.forward(&seq((3, 3), 8), 2).unwrap();
        assert_eq!(out.grid, (3, 3));
        assert_eq!(out.tokens.dim(), (10, 8));
    }
}
