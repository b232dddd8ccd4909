use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePreset {
    Desk,
    VitBLike,
    VitHLike,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: ScalePreset,
    pub input_side: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Number of candidate masks per decode.
    pub mask_count: usize,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    /// Channels of the full-resolution convolutional stem.
    pub stem_channels: usize,
    /// Channels of the quarter-resolution features.
    pub mid_channels: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            preset: ScalePreset::Desk,
            input_side: 128,
            patch_size: 16,
            embed_dim: 128,
            encoder_depth: 4,
            num_heads: 4,
            mlp_ratio: 4,
            mask_count: 3,
            decoder_dim: 64,
            decoder_depth: 2,
            decoder_heads: 4,
            stem_channels: 16,
            mid_channels: 32,
        }
    }

    pub fn vit_b_like() -> Self {
        Self {
            preset: ScalePreset::VitBLike,
            input_side: 1024,
            patch_size: 16,
            embed_dim: 768,
            encoder_depth: 12,
            num_heads: 12,
            mlp_ratio: 4,
            mask_count: 3,
            decoder_dim: 256,
            decoder_depth: 2,
            decoder_heads: 8,
            stem_channels: 32,
            mid_channels: 64,
        }
    }

    pub fn vit_h_like() -> Self {
        Self {
            preset: ScalePreset::VitHLike,
            embed_dim: 1280,
            encoder_depth: 32,
            num_heads: 16,
            ..Self::vit_b_like()
        }
    }

    pub fn from_preset(preset: ScalePreset) -> Self {
        match preset {
            ScalePreset::Desk => Self::desk(),
            ScalePreset::VitBLike => Self::vit_b_like(),
            ScalePreset::VitHLike => Self::vit_h_like(),
        }
    }

    pub fn validated(self) -> Result<Self> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size < 4 || self.patch_size % 4 != 0 {
            return fail(format!("patch_size {} must be a positive multiple of 4", self.patch_size));
        }
        if self.input_side == 0 || self.input_side % self.patch_size != 0 {
            return fail(format!(
                "input_side {} is not divisible by patch_size {}",
                self.input_side, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % self.num_heads.max(1) != 0 || self.num_heads == 0 {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.decoder_dim % 4 != 0 || self.decoder_heads == 0 || self.decoder_dim % self.decoder_heads != 0 {
            return fail(format!(
                "decoder_dim {} must be a multiple of 4 and of decoder_heads {}",
                self.decoder_dim, self.decoder_heads
            ));
        }
        if self.mask_count == 0 {
            return fail("mask_count must be at least 1".into());
        }
        if self.encoder_depth == 0 || self.mlp_ratio == 0 || self.stem_channels == 0 || self.mid_channels == 0 {
            return fail("depths, ratios and channel counts must be positive".into());
        }
        Ok(self)
    }

    pub fn grid_side(&self) -> usize {
        self.input_side / self.patch_size
    }

    pub fn token_count(&self) -> usize {
        self.grid_side() * self.grid_side()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
            Projection::Output => "o",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: BTreeSet<Projection>,
    /// Adapt every encoder block; when false only the last block is adapted.
    pub every_block: bool,
    /// Also train the mask decoder (the base encoder and prompt encoder stay
    /// frozen either way).
    pub unfreeze_decoder: bool,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 4.0,
            targets: [Projection::Query, Projection::Value].into_iter().collect(),
            every_block: true,
            unfreeze_decoder: false,
        }
    }
}

impl LoraConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            alpha: rank as f64,
            ..Self::default()
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("LoRA alpha {} must be positive", self.alpha)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("LoRA target set is empty".into()));
        }
        Ok(self)
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

impl fmt::Display for LoraConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}
