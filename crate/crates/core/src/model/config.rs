use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, GeluMode};
use crate::error::{Error, Result};

/// Convolutional stem plus transformer encoder over `[B, 1, channels, window]` input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub channels: usize,
    pub window: usize,
    pub temporal_kernel: usize,
    pub stem_channels: usize,
    pub spatial_kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_multiplier: usize,
    pub dropout: f64,
    /// Learned additive position embedding per token; off by default.
    pub positional: bool,
    pub gelu: GeluMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            window: 375,
            temporal_kernel: 25,
            stem_channels: 40,
            spatial_kernel: 16,
            pool_kernel: 75,
            pool_stride: 15,
            embed_dim: 40,
            layers: 6,
            heads: 10,
            ff_multiplier: 4,
            dropout: 0.5,
            positional: false,
            gelu: GeluMode::Tanh,
        }
    }
}

impl EncoderConfig {
    /// Small variant for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            channels: 3,
            window: 40,
            temporal_kernel: 5,
            stem_channels: 4,
            spatial_kernel: 3,
            pool_kernel: 6,
            pool_stride: 3,
            embed_dim: 4,
            layers: 1,
            heads: 2,
            ff_multiplier: 2,
            dropout: 0.0,
            positional: false,
            gelu: GeluMode::Tanh,
        }
    }

    /// Width of the feature map after temporal convolution and pooling.
    pub fn pooled_width(&self) -> usize {
        (self.window + 1 - self.temporal_kernel - self.pool_kernel) / self.pool_stride + 1
    }

    /// Height left after the spatial convolution (1 when it spans all electrodes).
    pub fn pooled_height(&self) -> usize {
        self.channels + 1 - self.spatial_kernel
    }

    pub fn tokens(&self) -> usize {
        self.pooled_height() * self.pooled_width()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.channels, self.window, self.temporal_kernel, self.stem_channels, self.spatial_kernel]
            .contains(&0)
            || [self.pool_kernel, self.pool_stride, self.embed_dim, self.heads, self.ff_multiplier].contains(&0)
        {
            return bad("encoder extents must be positive".into());
        }
        if self.spatial_kernel > self.channels {
            return bad(format!("spatial kernel {} exceeds {} channels", self.spatial_kernel, self.channels));
        }
        if self.temporal_kernel + self.pool_kernel > self.window + 1 {
            return bad(format!(
                "window {} too short for temporal kernel {} and pool {}",
                self.window, self.temporal_kernel, self.pool_kernel
            ));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Dense projection to a small latent image, upsampling convolutions to a
/// coarse 3-channel map, then stride-2 transposed convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Hidden widths of the projection; the last must equal the latent volume.
    pub projection_widths: Vec<usize>,
    pub latent_channels: usize,
    pub latent_size: usize,
    /// Output channels of each bilinear-upsample + 3×3 conv stage; the last is the coarse map.
    pub upsample_channels: Vec<usize>,
    /// Output channels of each 2×2 stride-2 transposed convolution; the last must be 3.
    pub transposed_channels: Vec<usize>,
    pub gelu: GeluMode,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            projection_widths: vec![512, 256],
            latent_channels: 4,
            latent_size: 8,
            upsample_channels: vec![32, 16, 3],
            transposed_channels: vec![16, 3],
            gelu: GeluMode::Tanh,
        }
    }
}

impl DecoderConfig {
    /// Small variant with a 16×16 output for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            projection_widths: vec![8, 8],
            latent_channels: 2,
            latent_size: 2,
            upsample_channels: vec![3],
            transposed_channels: vec![4, 3],
            gelu: GeluMode::Tanh,
        }
    }

    pub fn output_size(&self) -> usize {
        self.latent_size << (self.upsample_channels.len() + self.transposed_channels.len())
    }

    pub fn validate(&self) -> Result<()> {
        let latent = self.latent_channels * self.latent_size * self.latent_size;
        match self.projection_widths.last() {
            Some(&w) if w == latent => {}
            _ => {
                return Err(Error::Config(format!(
                    "last projection width must equal latent volume {latent}, got {:?}",
                    self.projection_widths
                )))
            }
        }
        if self.upsample_channels.is_empty() || self.upsample_channels.contains(&0) {
            return Err(Error::Config("need at least one upsampling stage with positive width".into()));
        }
        if self.transposed_channels.last() != Some(&3) || self.transposed_channels.contains(&0) {
            return Err(Error::Config(format!(
                "transposed stages must end in 3 channels, got {:?}",
                self.transposed_channels
            )));
        }
        Ok(())
    }
}

/// Weights of the reconstruction and smoothness terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_smooth: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_rec >= 0.0 && self.lambda_smooth >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub loss: LossWeights,
    /// Write a checkpoint every this many steps (and always at the end).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch: 8,
            epochs: 10,
            max_steps: None,
            seed: 0,
            loss: LossWeights::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.optimizer.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.optimizer.lr)));
        }
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_token_arithmetic() {
        let c = EncoderConfig::default();
        assert_eq!(c.pooled_width(), 19);
        assert_eq!(c.tokens(), 19);
        assert_eq!(c.tokens() * c.embed_dim, 760);
        c.validate().unwrap();
        assert_eq!(DecoderConfig::default().output_size(), 256);
        DecoderConfig::default().validate().unwrap();
    }

    #[test]
    fn tiny_configs_are_consistent() {
        EncoderConfig::tiny().validate().unwrap();
        DecoderConfig::tiny().validate().unwrap();
        assert_eq!(DecoderConfig::tiny().output_size(), 16);
    }

    #[test]
    fn rejects_bad_head_split_and_latent() {
        let c = EncoderConfig { heads: 7, ..Default::default() };
        assert!(c.validate().unwrap_err().is_config());
        let d = DecoderConfig { projection_widths: vec![512, 200], ..Default::default() };
        assert!(d.validate().is_err());
    }

    #[test]
    fn json_defaults_are_explicit() {
        let t: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(t, TrainConfig::default());
        let text = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert!(text.contains("\"lr\":0.0001") && text.contains("\"batch\":8"));
        assert!(serde_json::from_str::<TrainConfig>("{\"bogus\":1}").is_err());
    }
}
