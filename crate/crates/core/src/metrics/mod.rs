//! Classification metrics, per-concept AUROC, the explanation rubric, and blinded case
//! bundles for review.

mod bundle;
mod classification;
mod rubric;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bundle::{
    blinding_denylist, export_case_bundles, record_scores_imported, scan_for_tokens, unseal,
    BundleExport, CaseMaterial, KeyEntry, BUNDLE_DIR, SEALED_DIR,
};
pub use classification::{
    auroc, balanced_accuracy, confusion_stats, evaluate, mean_present, per_concept_auroc,
    threshold, ClassificationReport, ConfusionStats, PredictionRecord, PredictionSet,
};
pub use rubric::{
    aggregate_rubric, import_rubric_scores, parse_cints, BasLevel, CigsLevel, RubricAggregate,
    RubricScore,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("inconsistent inputs: {0}")]
    Length(String),
    #[error("row {row}, field `{field}`: {message}")]
    Schema {
        row: usize,
        field: &'static str,
        message: String,
    },
    #[error("case selection: {0}")]
    Selection(String),
    #[error("bundle export: {0}")]
    Bundle(String),
    #[error("sealed key: {0}")]
    Sealed(String),
    #[error("the sealed key stays closed until reviewer scores have been imported")]
    SealedUntilScored,
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MetricsError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
        move |source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> MetricsError {
        MetricsError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}
