//! Variant assembly and the optimization loop: AdamW, linear warmup with cosine decay,
//! and early stopping on validation loss, run per patient-level fold.

mod fit;
mod optim;
mod variant;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{
    fit_fold, predict_split, resolve_texts, training_ids, validation_split, EpochRecord,
    FoldOutcome, ImageCache, TrainingData,
};
pub use optim::{lr_schedule, AdamW, AdamWConfig, EarlyStopper, StopDecision};
pub use variant::{ablation_ladder, build_variant, TextSourceKind, VariantKind, VariantSpec};

use crate::corpus::{AugmentConfig, CorpusError};
use crate::encoder::{ClipDirection, EncoderError};
use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("inconsistent variant: {0}")]
    InconsistentVariant(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no report available for training sample `{0}`")]
    MissingReport(String),
    #[error("no image loaded for sample `{0}`")]
    MissingImage(String),
    #[error("sample `{0}` has a non-binary label")]
    NonBinaryLabel(String),
    #[error("test-fold record `{0}` reached the training data")]
    Leakage(String),
    #[error("{0}")]
    EmptySplit(String),
    #[error("loss became non-finite in fold {fold}, epoch {epoch}")]
    Diverged { fold: usize, epoch: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainingError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainingError + '_ {
        move |source| TrainingError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Epochs without improvement before stopping; absent means never.
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop: EarlyStopConfig,
    #[serde(default)]
    pub adamw: AdamWConfig,
    /// Share of training patients held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_direction")]
    pub clip_direction: ClipDirection,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_val_fraction() -> f64 {
    0.15
}

fn default_direction() -> ClipDirection {
    ClipDirection::Symmetric
}

fn default_threshold() -> f64 {
    0.5
}

impl TrainConfig {
    /// Schedule of the full-scale setup: 150 epochs, 10 warmup, initial rate 1e-5.
    pub fn paper() -> Self {
        Self {
            lr: 1e-5,
            epochs: 150,
            warmup_epochs: 10,
            batch_size: 32,
            seed: 0,
            early_stop: EarlyStopConfig { patience: Some(10) },
            adamw: AdamWConfig::default(),
            val_fraction: default_val_fraction(),
            augment: AugmentConfig::default(),
            clip_direction: default_direction(),
            threshold: default_threshold(),
        }
    }

    /// Short schedule for the tiny encoders on synthetic data.
    pub fn desk() -> Self {
        Self {
            lr: 3e-3,
            epochs: 30,
            warmup_epochs: 3,
            early_stop: EarlyStopConfig { patience: None },
            augment: AugmentConfig::identity(),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.into()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        Ok(())
    }
}
