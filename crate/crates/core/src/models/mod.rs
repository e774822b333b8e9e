//! Segmentation and slice-classification networks, their training loops and
//! checkpoints.
//!
//! Both networks keep their parameters in one flat `f32` vector. The order
//! of tensors is given by the checkpoint's tensor table; convolution weights
//! are `[out, in, 3, 3]`, transposed-convolution weights `[out, 2, 2, in]`
//! and linear / 1×1 weights `[out, in]`, all row-major.

mod augment;
mod checkpoint;
mod layers;
mod loss;
mod net;
mod optim;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RegionLabel;
use crate::io::IoError;

pub use augment::{pad_to_multiple, resize_bilinear, zscore, Augmentation, MAX_ROTATION_DEG};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EpochLog, CHECKPOINT_PARAMS, CHECKPOINT_MANIFEST};
pub use layers::TensorSpec;
pub use loss::{classification_loss, segmentation_loss, soft_dice, softmax, softmax_pixels, LossValue, DICE_SMOOTH};
pub use net::{ClassifierNet, UNet};
pub use optim::{poly_lr, AdamConfig, SgdConfig};
pub use tensor::Scalar;
pub use train::{
    argmax_region, init_classifier, init_segmenter, predict_region, predict_segmentation, segmentation_gradient_check, train_classifier, train_segmenter, Classifier, GradientCheck,
    Segmenter,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no training slices for scope {0}")]
    EmptyScope(RegionScope),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    DivergedTraining { epoch: usize, batch: usize },
    #[error("expected a {expected} checkpoint, got a {found}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("train split has no {0} slices")]
    MissingClass(RegionLabel),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint content hash mismatch: manifest {expected}, computed {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Segmenter,
    Classifier,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Segmenter => "segmenter",
            ModelKind::Classifier => "classifier",
        })
    }
}

/// Which slices a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionScope {
    All,
    Base,
    Middle,
    Apex,
}

impl RegionScope {
    pub fn region(self) -> Option<RegionLabel> {
        match self {
            RegionScope::All => None,
            RegionScope::Base => Some(RegionLabel::Base),
            RegionScope::Middle => Some(RegionLabel::Middle),
            RegionScope::Apex => Some(RegionLabel::Apex),
        }
    }

    pub fn for_region(region: RegionLabel) -> Self {
        match region {
            RegionLabel::NonCardiac => RegionScope::All,
            RegionLabel::Base => RegionScope::Base,
            RegionLabel::Middle => RegionScope::Middle,
            RegionLabel::Apex => RegionScope::Apex,
        }
    }

    pub fn contains(self, region: RegionLabel) -> bool {
        self.region().is_none_or(|r| r == region)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionScope::All => "all",
            RegionScope::Base => "base",
            RegionScope::Middle => "middle",
            RegionScope::Apex => "apex",
        }
    }
}

impl std::fmt::Display for RegionScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub optimizer: SgdConfig,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    /// Gradient L2-norm clipping threshold.
    pub grad_clip: f64,
    /// Validation slices scored after each epoch (evenly spaced subset).
    pub val_slices: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SegmenterConfig {
    pub fn desk() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            optimizer: SgdConfig::default(),
            epochs: 20,
            batches_per_epoch: 50,
            batch_size: 8,
            seed: 0,
            augment: true,
            grad_clip: 12.0,
            val_slices: 32,
        }
    }

    pub fn paper() -> Self {
        Self {
            epochs: 1000,
            batches_per_epoch: 250,
            batch_size: 32,
            val_slices: 256,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.depth < 2 {
            return bad("depth must be >= 2");
        }
        if self.base_channels < 1 {
            return bad("base_channels must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs < 1 || self.batches_per_epoch < 1 {
            return bad("epochs and batches_per_epoch must be >= 1");
        }
        if !(self.optimizer.lr0 > 0.0) || !(0.0..1.0).contains(&self.optimizer.momentum) {
            return bad("lr0 must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierLoss {
    CrossEntropy,
    WeightedCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub conv_blocks: usize,
    pub channels: usize,
    pub loss: ClassifierLoss,
    pub optimizer: AdamConfig,
    /// One epoch is one shuffled pass over the train slices.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub input_size: usize,
    pub augment: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ClassifierConfig {
    pub fn desk() -> Self {
        Self {
            conv_blocks: 4,
            channels: 16,
            loss: ClassifierLoss::CrossEntropy,
            optimizer: AdamConfig::default(),
            epochs: 15,
            batch_size: 8,
            seed: 0,
            input_size: 64,
            augment: true,
        }
    }

    pub fn paper() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.conv_blocks < 2 {
            return bad("conv_blocks must be >= 2".into());
        }
        if self.channels < 1 || self.batch_size < 1 || self.epochs < 1 {
            return bad("channels, batch_size and epochs must be >= 1".into());
        }
        if self.input_size % (1 << self.conv_blocks) != 0 {
            return bad(format!(
                "input_size {} must be a multiple of 2^{}",
                self.input_size, self.conv_blocks
            ));
        }
        if !(self.optimizer.lr0 > 0.0) {
            return bad("lr0 must be positive".into());
        }
        Ok(())
    }
}

/// Configuration snapshot stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Segmenter(SegmenterConfig),
    Classifier(ClassifierConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Segmenter(_) => ModelKind::Segmenter,
            ModelConfig::Classifier(_) => ModelKind::Classifier,
        }
    }
}
