//! The context-window transformer classifier.
//!
//! Data flow for one window of `C` channels and `P` patches of `L` samples:
//!
//! 1. every single-channel patch is projected to `D` dimensions,
//! 2. a two-layer convolutional extractor runs along the embedding axis and
//!    its re-projected output is added back (residual),
//! 3. learnable temporal position encodings are added,
//! 4. a pre-norm transformer encoder with weights shared across channels
//!    encodes each channel's patch sequence independently,
//! 5. a final layer norm is followed by mean pooling over patches,
//! 6. learnable channel position encodings are added and one pre-norm
//!    multi-head attention block mixes the `C` channel tokens,
//! 7. a linear layer maps the flattened `C·D` tokens to two logits.
//!
//! All gradients are analytic; [`gradcheck`] verifies them against central
//! finite differences.

pub mod checkpoint;
pub mod gradcheck;
mod network;
mod ops;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::windowing::WindowSpec;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use gradcheck::{grad_check, GradCheckReport};
pub use network::{
    backward, embed_patches, forward, forward_embedded, logits, logits_embedded, loss_and_grad,
    predict, smoothed_cross_entropy, Dropout, ForwardOutput, Tape,
};
pub use params::{parameter_count, ModelParams, TensorInfo};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("segment of {samples} samples is not a whole number of {patch_len}-sample patches")]
    IndivisibleLength { samples: usize, patch_len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation after {layer}")]
    NonFiniteActivation { layer: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// The two convolution layers of the patch feature extractor. The
/// nonlinearity is GELU (tanh form) after each layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernels: [usize; 2],
    pub widths: [usize; 2],
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            kernels: [7, 5],
            widths: [4, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub patch_len: usize,
    pub embed_dim: usize,
    pub conv: ConvSpec,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub cross_channel_heads: usize,
    pub n_classes: usize,
    pub window: WindowSpec,
    /// Multiplies raw microvolt samples before the patch projection.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_channels: 18,
            patch_len: 128,
            embed_dim: 64,
            conv: ConvSpec::default(),
            n_encoder_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            cross_channel_heads: 4,
            n_classes: 2,
            window: WindowSpec::default(),
            input_scale: 0.01,
        }
    }
}

impl ModelConfig {
    /// A config small enough for exhaustive finite-difference checks
    /// (about 2.4k parameters).
    pub fn tiny() -> Self {
        ModelConfig {
            n_channels: 18,
            patch_len: 16,
            embed_dim: 8,
            conv: ConvSpec {
                kernels: [3, 3],
                widths: [2, 2],
            },
            n_encoder_layers: 2,
            n_heads: 2,
            ffn_dim: 16,
            dropout: 0.1,
            cross_channel_heads: 2,
            n_classes: 2,
            window: WindowSpec::new(0.125, 0.25, 0.125),
            input_scale: 0.01,
        }
    }

    pub fn window_samples(&self) -> usize {
        self.window.total_samples()
    }

    pub fn n_patches(&self) -> usize {
        self.window_samples() / self.patch_len
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        self.window
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        if self.n_channels == 0 || self.patch_len == 0 || self.embed_dim == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.n_classes != 2 {
            return bad(format!("n_classes must be 2, got {}", self.n_classes));
        }
        if self.window_samples() % self.patch_len != 0 {
            return bad(format!(
                "window of {} samples is not divisible by patch length {}",
                self.window_samples(),
                self.patch_len
            ));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.cross_channel_heads == 0 || self.embed_dim % self.cross_channel_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by cross_channel_heads {}",
                self.embed_dim, self.cross_channel_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.conv.kernels.iter().any(|k| k % 2 == 0) || self.conv.widths.contains(&0) {
            return bad("conv kernels must be odd and widths positive".into());
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be positive".into());
        }
        Ok(())
    }
}

/// Splits `[channel][sample]` into non-overlapping patches, returned
/// row-major as `[channel][patch][sample-in-patch]`.
///
/// Because channels are stored contiguously this is a plain reshape: patch
/// `p` of channel `c` is `samples[c][p·L .. (p+1)·L]`.
pub fn patchify(samples: &[Vec<f64>], patch_len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.iter().map(Vec::len).sum());
    for row in samples {
        if patch_len == 0 || row.len() % patch_len != 0 {
            return Err(ModelError::IndivisibleLength {
                samples: row.len(),
                patch_len,
            });
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.window_samples(), 80 * 128);
        assert_eq!(cfg.n_patches(), 80);
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.patch_len = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn patches_match_index_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (c, p, l) = (3, 5, 7);
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..p * l).map(|_| rng.random()).collect())
            .collect();
        let flat = patchify(&rows, l).unwrap();
        for ci in 0..c {
            for pi in 0..p {
                for i in 0..l {
                    assert_eq!(flat[(ci * p + pi) * l + i], rows[ci][pi * l + i]);
                }
            }
        }
        // concatenating the patches of each channel restores it
        for ci in 0..c {
            assert_eq!(&flat[ci * p * l..(ci + 1) * p * l], rows[ci].as_slice());
        }
        assert!(matches!(
            patchify(&rows, 4),
            Err(ModelError::IndivisibleLength { .. })
        ));
    }
}
