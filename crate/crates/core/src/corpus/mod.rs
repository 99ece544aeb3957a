//! Dataset ingestion: concept banks, manifests, patient-level folds, preprocessing and the
//! synthetic concept-encoded corpus.

mod bank;
mod image_ops;
mod manifest;
mod split;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use bank::{display_name, ConceptBank, ConceptEntry};
pub use image_ops::{augment, crop_and_resize, AugmentConfig, Raster, Roi, MODEL_INPUT_SIZE};
pub use manifest::{
    load_manifest, save_manifest, Birads, DatasetManifest, Label, SampleRecord, TRAIN_ONLY_TAG,
};
pub use split::{make_patient_folds, FoldSplit, SplitPlan};
pub use synth::{synth_generate, LabelRule, SynthCorpus, SynthSidecar};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("row {row}, field `{field}`: {message}")]
    Schema {
        row: usize,
        field: String,
        message: String,
    },
    #[error("sample `{sample_id}`: concept vector has {found} entries, bank `{bank_id}` defines {expected}")]
    ConceptLength {
        sample_id: String,
        bank_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate sample_id `{0}`")]
    DuplicateSample(String),
    #[error("sample `{sample_id}`: image {path} does not exist")]
    MissingImage { sample_id: String, path: PathBuf },
    #[error("invalid concept bank: {0}")]
    InvalidBank(String),
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("cannot split {patients} patients into {k} folds")]
    NotEnoughPatients { patients: usize, k: usize },
    #[error("fold {fold} out of range for a {k}-fold plan")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("patient `{0}` has no fold assignment")]
    UnassignedPatient(String),
    #[error("roi {roi:?} exceeds image bounds {width}x{height}")]
    RoiOutOfBounds { roi: Roi, width: u32, height: u32 },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CorpusError::Io { path, source }
    }
}
