//! Architectural hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input image size as (height, width) in pixels.
    pub input_size: (usize, usize),
    pub patch_size: usize,
    /// Output channels of both 3x3 stem convolutions.
    pub stem_channels: usize,
    /// Token dimension after patch embedding; equals `stage_dims[0]`.
    pub embed_dim: usize,
    pub stage_depths: Vec<usize>,
    pub stage_dims: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub mlp_ratio: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Small two-stage model used for tests and CPU training runs.
    pub fn desk_tiny(num_classes: usize) -> Self {
        Self {
            input_size: (64, 64),
            patch_size: 8,
            stem_channels: 8,
            embed_dim: 32,
            stage_depths: vec![2, 2],
            stage_dims: vec![32, 64],
            num_heads: vec![2, 2],
            mlp_ratio: 4,
            num_classes,
        }
    }

    /// 224x224 input with 16-pixel patches (14x14 grid) and one downsampling to 7x7.
    pub fn patch16_224(num_classes: usize) -> Self {
        Self {
            input_size: (224, 224),
            patch_size: 16,
            stem_channels: 16,
            embed_dim: 64,
            stage_depths: vec![2, 2],
            stage_dims: vec![64, 128],
            num_heads: vec![2, 4],
            mlp_ratio: 4,
            num_classes,
        }
    }

    /// 224x224 input with a stride-4 patchification (56x56 grid) and four
    /// stages reducing to 7x7, the layout of the tiny GCViT family.
    pub fn four_stage_224(num_classes: usize) -> Self {
        Self {
            input_size: (224, 224),
            patch_size: 4,
            stem_channels: 16,
            embed_dim: 64,
            stage_depths: vec![2, 2, 6, 2],
            stage_dims: vec![64, 128, 256, 512],
            num_heads: vec![2, 4, 8, 16],
            mlp_ratio: 4,
            num_classes,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_dims.len()
    }

    /// Patch grid (rows, cols) produced by the embedding.
    pub fn patch_grid(&self) -> Result<(usize, usize)> {
        let (h, w) = self.input_size;
        let p = self.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::DimensionMismatch(format!(
                "input {h}x{w} is not divisible by patch size {p}"
            )));
        }
        Ok((h / p, w / p))
    }

    pub fn num_patches(&self) -> Result<usize> {
        self.patch_grid().map(|(r, c)| r * c)
    }

    pub fn head_dim(&self, stage: usize) -> usize {
        self.stage_dims[stage] / self.num_heads[stage]
    }

    /// Token grid entering each stage. Errors if a downsampling boundary sees
    /// an odd spatial dimension.
    pub fn stage_grids(&self) -> Result<Vec<(usize, usize)>> {
        let mut grid = self.patch_grid()?;
        let mut grids = Vec::with_capacity(self.num_stages());
        for s in 0..self.num_stages() {
            grids.push(grid);
            if s + 1 < self.num_stages() {
                grid = halve_grid(grid)?;
            }
        }
        Ok(grids)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return bad("input size must be positive".into());
        }
        self.patch_grid()?;
        let n = self.stage_dims.len();
        if n == 0 {
            return bad("at least one stage is required".into());
        }
        if self.stage_depths.len() != n || self.num_heads.len() != n {
            return bad(format!(
                "stage_depths ({}), stage_dims ({}) and num_heads ({}) must have equal length",
                self.stage_depths.len(),
                n,
                self.num_heads.len()
            ));
        }
        if self.embed_dim != self.stage_dims[0] {
            return bad(format!(
                "embed_dim {} must equal the first stage dim {}",
                self.embed_dim, self.stage_dims[0]
            ));
        }
        if self.stage_dims.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("stage_dims {:?} must be non-decreasing", self.stage_dims));
        }
        for (s, (&d, &h)) in self.stage_dims.iter().zip(&self.num_heads).enumerate() {
            if d == 0 || h == 0 || d % h != 0 {
                return bad(format!("stage {s}: dim {d} is not divisible by {h} heads"));
            }
        }
        if self.stem_channels == 0 || self.mlp_ratio == 0 {
            return bad("stem_channels and mlp_ratio must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        self.stage_grids()?;
        Ok(())
    }
}

pub(crate) fn halve_grid((h, w): (usize, usize)) -> Result<(usize, usize)> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot downsample odd grid {h}x{w}"
        )));
    }
    Ok((h / 2, w / 2))
}
