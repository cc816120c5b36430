use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub decoder_dim: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub max_patches: usize,
    pub patch_size: usize,
    pub dropout: f64,
    pub norm_pix_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale default: 192 wide, 6 layers, 3 heads, 96×2 decoder.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 192,
            num_layers: 6,
            num_heads: 3,
            mlp_ratio: 4,
            decoder_dim: 96,
            decoder_layers: 2,
            decoder_heads: 3,
            max_patches: 529,
            patch_size: 16,
            dropout: 0.1,
            norm_pix_loss: true,
        }
    }

    /// ViT-base encoder with a 512×8 decoder.
    pub fn base() -> Self {
        Self {
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_ratio: 4,
            decoder_dim: 512,
            decoder_layers: 8,
            decoder_heads: 16,
            max_patches: 529,
            patch_size: 16,
            dropout: 0.1,
            norm_pix_loss: true,
        }
    }

    /// Very small model for smoke runs and tests.
    pub fn tiny(max_patches: usize) -> Self {
        Self {
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 2,
            mlp_ratio: 2,
            decoder_dim: 16,
            decoder_layers: 1,
            decoder_heads: 2,
            max_patches,
            patch_size: 16,
            dropout: 0.0,
            norm_pix_loss: true,
        }
    }

    /// 64-wide, 2-layer encoder with a 128-wide single-block decoder; large
    /// enough to memorize a handful of sentences within a few hundred steps.
    pub fn smoke() -> Self {
        Self {
            hidden_dim: 64,
            mlp_ratio: 4,
            decoder_dim: 128,
            ..Self::tiny(64)
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "base" => Some(Self::base()),
            "tiny" => Some(Self::tiny(64)),
            "smoke" => Some(Self::smoke()),
            _ => None,
        }
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.decoder_dim == 0 || self.decoder_heads == 0 || self.decoder_dim % self.decoder_heads != 0 {
            return bad(format!(
                "decoder_dim {} not divisible by decoder_heads {}",
                self.decoder_dim, self.decoder_heads
            ));
        }
        if self.num_layers > 0 && self.decoder_layers >= self.num_layers {
            return bad(format!(
                "decoder ({} layers) must be shallower than the encoder ({} layers)",
                self.decoder_layers, self.num_layers
            ));
        }
        if self.mlp_ratio == 0 || self.max_patches < 2 || self.patch_size == 0 {
            return bad("mlp_ratio, max_patches and patch_size must be positive (max_patches >= 2)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
