//! Reasoning prompts built from model outputs, the reasoning client call, and parsing and
//! grounding of the returned explanation.

mod explain;
mod prompt;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use explain::{
    generate_explanation, normalize_words, parse_birads, parse_explanation, parse_follow_up,
    validate_grounding, Explanation, ExplanationTranscript, FollowUpRule, GroundingEntry,
    GroundingStatus, StubReasoningClient, STUB_REASONING_CLIENT_ID,
};
pub use prompt::{
    build_reasoning_prompt, concept_line, concept_vocabulary, diagnosis_text, instructions_for,
    is_breast_ultrasound, ReasoningPrompt, BIRADS_INSTRUCTIONS, CONCEPT_THRESHOLD,
    FIELD_GUIDE_INSTRUCTIONS, INTRODUCTION_TEMPLATE,
};

use crate::enrichment::ClientError;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("guideline `{0}` is not a diagnostic guideline")]
    WrongGuidelineKind(String),
    #[error("prediction has {found} concept scores, the bank has {expected}")]
    ConceptCount { expected: usize, found: usize },
    #[error("reasoning client failed (retryable: {retryable}): {source}")]
    Client {
        retryable: bool,
        #[source]
        source: ClientError,
    },
    #[error("reasoning client returned an empty explanation")]
    EmptyExplanation,
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ReasoningError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ReasoningError::Client { retryable: true, .. })
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReasoningError + '_ {
        move |source| ReasoningError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
