use serde::{Deserialize, Serialize};

use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool {
    pub window: usize,
    pub stride: usize,
}

/// One CNN branch: `layers[0]`, pool, dropout, `layers[1..]`, optional final
/// pool, dropout. Every convolution is followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub layers: Vec<ConvLayer>,
    pub first_pool: Pool,
    pub final_pool: Option<Pool>,
    pub dropout: f64,
}

impl BranchConfig {
    /// Small filters: temporal detail.
    pub fn small() -> Self {
        let deep = ConvLayer { filters: 128, width: 8, stride: 1, padding: 4 };
        Self {
            layers: vec![ConvLayer { filters: 64, width: 50, stride: 6, padding: 22 }, deep, deep, deep],
            first_pool: Pool { window: 8, stride: 8 },
            final_pool: Some(Pool { window: 4, stride: 4 }),
            dropout: 0.5,
        }
    }

    /// Large filters: frequency content.
    pub fn large() -> Self {
        let deep = ConvLayer { filters: 128, width: 6, stride: 1, padding: 3 };
        Self {
            layers: vec![ConvLayer { filters: 64, width: 400, stride: 50, padding: 175 }, deep, deep, deep],
            first_pool: Pool { window: 4, stride: 4 },
            final_pool: Some(Pool { window: 2, stride: 2 }),
            dropout: 0.5,
        }
    }

    /// `(channels, length)` of the branch output for an input of `len` samples.
    pub fn output_shape(&self, len: usize) -> Result<(usize, usize), NetworkError> {
        let conv = |l: usize, c: &ConvLayer| -> Result<usize, NetworkError> {
            if c.stride == 0 || c.width == 0 || c.width > l + 2 * c.padding {
                return Err(NetworkError::Config(format!("conv layer {c:?} does not fit length {l}")));
            }
            Ok((l + 2 * c.padding - c.width) / c.stride + 1)
        };
        let pool = |l: usize, p: &Pool| -> Result<usize, NetworkError> {
            if p.stride == 0 || p.window == 0 || p.window > l {
                return Err(NetworkError::Config(format!("pool {p:?} does not fit length {l}")));
            }
            Ok((l - p.window) / p.stride + 1)
        };
        let (first, rest) = self
            .layers
            .split_first()
            .ok_or_else(|| NetworkError::Config("a CNN branch needs at least one layer".into()))?;
        let mut l = pool(conv(len, first)?, &self.first_pool)?;
        for c in rest {
            l = conv(l, c)?;
        }
        if let Some(p) = &self.final_pool {
            l = pool(l, p)?;
        }
        let channels = self.layers.last().map_or(0, |c| c.filters);
        Ok((channels, l))
    }
}

/// Architecture hyperparameters. Loaded from TOML; omitted keys take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per 30-s epoch.
    pub epoch_samples: usize,
    pub small_branch: BranchConfig,
    pub large_branch: BranchConfig,
    /// Dropout on the concatenated CNN features.
    pub feature_dropout: f64,
    /// LSTM hidden size per encoder direction.
    pub encoder_hidden: usize,
    /// Width of the encoder outputs `e_i`.
    pub encoder_output: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    /// Initial forget-gate bias of every LSTM.
    pub forget_bias: f64,
    /// Epochs per input sequence.
    pub maxtime: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            epoch_samples: 3000,
            small_branch: BranchConfig::small(),
            large_branch: BranchConfig::large(),
            feature_dropout: 0.5,
            encoder_hidden: 128,
            encoder_output: 128,
            decoder_hidden: 128,
            attention_dim: 64,
            forget_bias: 1.0,
            maxtime: 10,
        }
    }
}

impl ModelConfig {
    /// A miniature network for gradient checks and smoke tests: 64-sample
    /// epochs, a handful of channels and hidden units, `maxtime` 3.
    pub fn tiny() -> Self {
        let deep = ConvLayer { filters: 3, width: 3, stride: 1, padding: 1 };
        Self {
            epoch_samples: 64,
            small_branch: BranchConfig {
                layers: vec![ConvLayer { filters: 3, width: 8, stride: 2, padding: 3 }, deep, deep, deep],
                first_pool: Pool { window: 4, stride: 4 },
                final_pool: Some(Pool { window: 2, stride: 2 }),
                dropout: 0.5,
            },
            large_branch: BranchConfig {
                layers: vec![ConvLayer { filters: 3, width: 16, stride: 4, padding: 6 }, deep, deep, deep],
                first_pool: Pool { window: 2, stride: 2 },
                final_pool: Some(Pool { window: 2, stride: 2 }),
                dropout: 0.5,
            },
            feature_dropout: 0.5,
            encoder_hidden: 6,
            encoder_output: 6,
            decoder_hidden: 6,
            attention_dim: 4,
            forget_bias: 1.0,
            maxtime: 3,
        }
    }

    /// Width of the concatenated CNN feature vector per epoch.
    pub fn feature_dim(&self) -> Result<usize, NetworkError> {
        let (cs, ls) = self.small_branch.output_shape(self.epoch_samples)?;
        let (cl, ll) = self.large_branch.output_shape(self.epoch_samples)?;
        Ok(cs * ls + cl * ll)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.feature_dim()?;
        let sizes = [
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_output", self.encoder_output),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("maxtime", self.maxtime),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NetworkError::Config(format!("{name} must be at least 1")));
        }
        for rate in [self.small_branch.dropout, self.large_branch.dropout, self.feature_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(NetworkError::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_dim() {
        let c = ModelConfig::default();
        // small: 3000 -> 500 -> pool 62 -> 63, 64, 65 -> pool 16; large: 3000 -> 60 -> pool 15 -> 16, 17, 18 -> pool 9
        assert_eq!(c.small_branch.output_shape(3000).unwrap(), (128, 16));
        assert_eq!(c.large_branch.output_shape(3000).unwrap(), (128, 9));
        assert_eq!(c.feature_dim().unwrap(), 128 * 25);
        c.validate().unwrap();
    }

    #[test]
    fn tiny_is_valid() {
        let c = ModelConfig::tiny();
        c.validate().unwrap();
        assert_eq!(c.feature_dim().unwrap(), 3 * 4 + 3 * 4);
    }

    #[test]
    fn too_short_epoch_rejected() {
        let c = ModelConfig { epoch_samples: 100, ..ModelConfig::default() };
        assert!(matches!(c.validate(), Err(NetworkError::Config(_))));
    }
}
