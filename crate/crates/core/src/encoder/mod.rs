//! Dual-encoder concept model.
//!
//! Images pass through a fixed backbone and a two-layer projection to unit-norm `h_v`;
//! reports pass through a hashed bag-of-tokens featurizer and a linear projection to
//! unit-norm `h_t`. A linear diagnostic head and one small adapter per concept read `h_v`.
//! All gradients are computed by hand.

pub mod backbone;
mod checkpoint;
mod loss;
mod model;
pub mod nn;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_embeddings};
pub use loss::{
    clip_loss, clip_loss_directed, concept_loss, diag_loss, total_loss, ClipDirection, ClipLoss,
    LossWeights,
};
pub use model::{
    predictions_from_outputs, Batch, ConceptModel, EncoderConfig, HeadInput, LossBreakdown,
    ModelOutputs, Params, Predictions, MAX_LOGIT_SCALE,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("loss weight `{name}` must be finite and non-negative, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("expected {expected} concepts, found {found}")]
    ConceptCount { expected: usize, found: usize },
    #[error("unsupported backbone `{0}`")]
    UnsupportedBackbone(String),
    #[error("backbone: {0}")]
    Backbone(String),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
