//! Contrastive window encoder: three conv blocks, global max pooling and a
//! three-layer projection head, trained with NT-Xent.

mod gradcheck;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{SensorSet, TARGET_RATE_HZ};

pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{nt_xent_loss, nt_xent_loss_grad};
pub use model::{Embedding, Encoder};
pub use train::{cosine_lr, train_encoder, EpochLog, TrainedEncoder, TrainingLog};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    DegenerateBatch(usize),
    #[error("not enough aligned pairs: needed {needed}, available {available}")]
    NotEnoughPairs { needed: usize, available: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One convolution block: conv → ReLU → batch norm → dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub stride: usize,
    pub dropout: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderArchitecture {
    pub in_channels: usize,
    /// Samples per channel of an input window.
    pub input_len: usize,
    pub conv_blocks: [ConvBlockSpec; 3],
    /// Widths of the three projection layers; the last is the embedding size.
    pub projection: [usize; 3],
}

impl EncoderArchitecture {
    /// Filters (32, 64, 96), kernels (24, 16, 8), stride 1, dropout 0.1,
    /// projection (256, 128, 64).
    pub fn standard(sensors: &SensorSet) -> Self {
        let block = |filters, kernel_size| ConvBlockSpec { filters, kernel_size, stride: 1, dropout: 0.1 };
        EncoderArchitecture {
            in_channels: sensors.channel_count(),
            input_len: window_samples(sensors),
            conv_blocks: [block(32, 24), block(64, 16), block(96, 8)],
            projection: [256, 128, 64],
        }
    }

    /// A strided, narrower variant that trains in minutes on one CPU core.
    pub fn compact(sensors: &SensorSet) -> Self {
        let block = |filters, kernel_size, stride| ConvBlockSpec { filters, kernel_size, stride, dropout: 0.1 };
        EncoderArchitecture {
            in_channels: sensors.channel_count(),
            input_len: window_samples(sensors),
            conv_blocks: [block(32, 24, 4), block(32, 16, 2), block(64, 8, 1)],
            projection: [128, 128, 64],
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.projection[2]
    }

    /// Time length after each conv block.
    pub fn block_lengths(&self) -> Result<[usize; 3], EncoderError> {
        let mut len = self.input_len;
        let mut out = [0; 3];
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.stride == 0 || len < b.kernel_size {
                return Err(EncoderError::InvalidConfig(format!(
                    "conv block {i} (kernel {}, stride {}) does not fit input length {len}",
                    b.kernel_size, b.stride
                )));
            }
            len = (len - b.kernel_size) / b.stride + 1;
            out[i] = len;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.in_channels == 0 {
            return Err(EncoderError::InvalidConfig("no input channels".into()));
        }
        for b in &self.conv_blocks {
            if b.filters == 0 || b.kernel_size == 0 || !(0.0..1.0).contains(&b.dropout) {
                return Err(EncoderError::InvalidConfig(format!("bad conv block {b:?}")));
            }
        }
        if self.projection.contains(&0) {
            return Err(EncoderError::InvalidConfig("zero-width projection layer".into()));
        }
        self.block_lengths().map(|_| ())
    }
}

fn window_samples(sensors: &SensorSet) -> usize {
    (sensors.window_secs() as f64 * TARGET_RATE_HZ).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub max_epochs: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Fraction of aligned keys held out for checkpoint selection.
    pub val_fraction: f64,
    /// Per-channel gain jitter: each training row is scaled by a factor
    /// drawn from `[1 − s, 1 + s]`.
    pub augment_scale: f64,
    /// Standard deviation of Gaussian noise added to training rows.
    pub augment_noise: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            initial_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
            temperature: 0.1,
            max_epochs: 200,
            convergence_window: 10,
            convergence_tol: 1e-4,
            val_fraction: 0.15,
            augment_scale: 0.3,
            augment_noise: 0.3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.into()));
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if !(0.0..0.9).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 0.9)");
        }
        if !(0.0..1.0).contains(&self.augment_scale) || !(self.augment_noise >= 0.0) {
            return bad("augment_scale must be in [0, 1) and augment_noise non-negative");
        }
        Ok(())
    }
}
