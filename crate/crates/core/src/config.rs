use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distortion term used by the rate-distortion loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMetric {
    #[default]
    Mse,
    MsSsim,
}

/// Training-time surrogate for rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantSurrogate {
    /// `x + u`, `u ~ U(-0.5, 0.5)`.
    #[default]
    Noise,
    /// Forward rounds, backward is identity.
    StraightThrough,
}

/// Rate-distortion trade-offs a checkpoint may be trained for; the container
/// stores the index into this table.
pub const LAMBDA_TABLE: [f64; 4] = [256.0, 512.0, 1024.0, 2048.0];

/// `lambda_id` written for lambdas outside [`LAMBDA_TABLE`].
pub const CUSTOM_LAMBDA_ID: u8 = 255;

pub fn lambda_id(lambda: f64) -> u8 {
    LAMBDA_TABLE
        .iter()
        .position(|&l| l == lambda)
        .map_or(CUSTOM_LAMBDA_ID, |i| i as u8)
}

/// Network widths and codec settings. Serialized as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub gop_size: usize,
    pub lambda: f64,
    pub distortion_metric: DistortionMetric,
    /// Width of every feature-pyramid level.
    pub feature_channels: usize,
    /// Width of the multi-channel motion representation.
    pub motion_channels: usize,
    /// Length of the pooled motion-aware descriptor.
    pub motion_aware_dim: usize,
    pub motion_latent_channels: usize,
    pub motion_hyper_channels: usize,
    pub context_latent_channels: usize,
    /// Channel chunks of the contextual latent, coded in order.
    pub context_groups: Vec<usize>,
    pub context_hyper_channels: usize,
    /// Hidden width of the entropy-parameter networks.
    pub context_hidden: usize,
    /// Hidden width of the stride-16 analysis/synthesis transforms.
    pub transform_channels: usize,
    pub deform_groups: usize,
    pub intra_channels: usize,
    pub intra_latent_channels: usize,
    pub intra_hyper_channels: usize,
    /// Multiplier on `lambda` for the intra model's own loss (first-frame quality knob).
    pub intra_lambda_scale: f64,
    /// `false` replaces coarse-to-fine fusion by the full-resolution initial motion only.
    pub multiscale_motion: bool,
    pub quant_surrogate: QuantSurrogate,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            gop_size: 10,
            lambda: 2048.0,
            distortion_metric: DistortionMetric::Mse,
            feature_channels: 64,
            motion_channels: 64,
            motion_aware_dim: 64,
            motion_latent_channels: 64,
            motion_hyper_channels: 64,
            context_latent_channels: 128,
            context_groups: vec![16, 16, 32, 64],
            context_hyper_channels: 64,
            context_hidden: 64,
            transform_channels: 64,
            deform_groups: 8,
            intra_channels: 64,
            intra_latent_channels: 64,
            intra_hyper_channels: 64,
            intra_lambda_scale: 1.0,
            multiscale_motion: true,
            quant_surrogate: QuantSurrogate::Noise,
            seed: 0,
        }
    }
}

impl CodecConfig {
    /// Narrow networks for fast tests and desk-scale overfitting. The contextual
    /// latent keeps its 128 channels and (16, 16, 32, 64) grouping.
    pub fn tiny() -> Self {
        CodecConfig {
            feature_channels: 16,
            motion_channels: 16,
            motion_aware_dim: 16,
            motion_latent_channels: 16,
            motion_hyper_channels: 8,
            context_hyper_channels: 16,
            context_hidden: 32,
            transform_channels: 32,
            deform_groups: 2,
            intra_channels: 32,
            intra_latent_channels: 32,
            intra_hyper_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gop_size", self.gop_size),
            ("feature_channels", self.feature_channels),
            ("motion_channels", self.motion_channels),
            ("motion_aware_dim", self.motion_aware_dim),
            ("motion_latent_channels", self.motion_latent_channels),
            ("motion_hyper_channels", self.motion_hyper_channels),
            ("context_hyper_channels", self.context_hyper_channels),
            ("context_hidden", self.context_hidden),
            ("transform_channels", self.transform_channels),
            ("deform_groups", self.deform_groups),
            ("intra_channels", self.intra_channels),
            ("intra_latent_channels", self.intra_latent_channels),
            ("intra_hyper_channels", self.intra_hyper_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.gop_size > u8::MAX as usize {
            return Err(Error::Config("gop_size must fit in one byte".into()));
        }
        if self.context_groups.is_empty() || self.context_groups.contains(&0) {
            return Err(Error::Config("context groups must be non-empty and positive".into()));
        }
        let sum: usize = self.context_groups.iter().sum();
        if sum != self.context_latent_channels {
            return Err(Error::Config(format!(
                "context groups sum to {sum}, latent has {} channels",
                self.context_latent_channels
            )));
        }
        if self.feature_channels % self.deform_groups != 0 {
            return Err(Error::Config(format!(
                "feature_channels {} not divisible by deform_groups {}",
                self.feature_channels, self.deform_groups
            )));
        }
        Ok(())
    }

    /// Channel offset of each context group.
    pub fn group_offsets(&self) -> Vec<usize> {
        self.context_groups
            .iter()
            .scan(0, |acc, &g| {
                let o = *acc;
                *acc += g;
                Some(o)
            })
            .collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: CodecConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_groups_partition_latent() {
        let cfg = CodecConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.context_groups, vec![16, 16, 32, 64]);
        assert_eq!(cfg.group_offsets(), vec![0, 16, 32, 64]);
        CodecConfig::tiny().validate().unwrap();
    }

    #[test]
    fn group_sum_mismatch_is_rejected() {
        let cfg = CodecConfig {
            context_groups: vec![16, 16, 32],
            ..CodecConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_with_partial_document() {
        let cfg = CodecConfig::from_json(r#"{"gop_size": 12, "lambda": 512, "distortion_metric": "ms_ssim"}"#).unwrap();
        assert_eq!(cfg.gop_size, 12);
        assert_eq!(cfg.distortion_metric, DistortionMetric::MsSsim);
        assert_eq!(cfg.feature_channels, 64);
        assert_eq!(CodecConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn lambda_ids() {
        assert_eq!(lambda_id(2048.0), 3);
        assert_eq!(lambda_id(256.0), 0);
        assert_eq!(lambda_id(100.0), CUSTOM_LAMBDA_ID);
    }
}
