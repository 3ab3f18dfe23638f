use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::ScaleMode;

/// Architecture / objective variants used by the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Cross-item and user-item blocks, click + impression loss.
    Full,
    /// No cross-item blocks and no impression loss: items never see each other.
    Pointwise,
    /// Full architecture trained on the click loss only.
    NoImpLoss,
    /// No cross-item blocks, both losses.
    NoCrossItem,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoImpLoss, Variant::NoCrossItem, Variant::Pointwise];

    pub fn has_cross_item(self) -> bool {
        matches!(self, Variant::Full | Variant::NoImpLoss)
    }

    pub fn uses_imp_loss(self) -> bool {
        matches!(self, Variant::Full | Variant::NoCrossItem)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Pointwise => "pointwise",
            Variant::NoImpLoss => "no_imp_loss",
            Variant::NoCrossItem => "no_cross_item",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Standard deviation rule for affine weights. Embedding tables, the null
/// behavior row and all biases/scales are unaffected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    /// Truncated normal with std 0.02.
    Fixed,
    /// Truncated normal with std `1/sqrt(fan_in)`.
    FanIn,
}

impl WeightInit {
    pub fn name(self) -> &'static str {
        match self {
            WeightInit::Fixed => "fixed",
            WeightInit::FanIn => "fan_in",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [WeightInit::Fixed, WeightInit::FanIn].into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder depth `L`.
    pub encoder_layers: usize,
    /// Decoder depth `M`.
    pub decoder_layers: usize,
    pub d_embed: usize,
    pub d_token: usize,
    pub heads: usize,
    pub eps: f64,
    pub scale_mode: ScaleMode,
    /// Weight of the impression loss.
    pub lambda: f64,
    pub variant: Variant,
    pub seed: u64,
    /// Longest position id with its own embedding row; larger positions clamp to it.
    pub max_seq_len: usize,
    pub weight_init: WeightInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 1,
            decoder_layers: 1,
            d_embed: 8,
            d_token: 16,
            heads: 1,
            eps: 1e-5,
            scale_mode: ScaleMode::InvSqrtDim,
            lambda: 1.0,
            variant: Variant::Full,
            seed: 0,
            max_seq_len: 512,
            weight_init: WeightInit::Fixed,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decoder_layers < 1 {
            return Err(Error::Config("decoder_layers must be >= 1".into()));
        }
        if self.d_token < 1 || self.d_embed < 1 {
            return Err(Error::Config("d_token and d_embed must be >= 1".into()));
        }
        if self.heads < 1 || self.d_token % self.heads != 0 {
            return Err(Error::Config(format!("d_token {} is not divisible by {} heads", self.d_token, self.heads)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config("eps must be >= 0".into()));
        }
        Ok(())
    }

    /// Width of the hidden layer of each prediction head.
    pub fn head_hidden(&self) -> usize {
        (self.d_token / 2).max(1)
    }

    /// Impression-loss weight actually applied, after variant overrides.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.uses_imp_loss() {
            self.lambda
        } else {
            0.0
        }
    }
}
