//! Guideline-conditioned concept enrichment: a sample's positive concepts and the reporting
//! guideline are rendered into a generation prompt whose answer becomes the report that the
//! text encoder is aligned with.

mod cache;
mod client;
mod prompt;

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheStats, ReportCache};
pub use client::{
    Attachment, ClientConfig, ClientError, GenerationClient, RetryingClient, StubReportClient,
    STUB_REPORT_CLIENT_ID,
};
pub use prompt::{
    build_lvlm_prompt, extract_positive_concepts, EnrichmentRequest, LvlmPrompt, PromptOptions,
    CONCEPT_BLOCK_HEADER, REPORT_INSTRUCTION,
};

use crate::corpus::{ConceptBank, DatasetManifest, Label};
use crate::guidelines::{Guideline, Modality};

#[derive(Debug, Error)]
pub enum EnrichmentError {
    #[error("concept vector has {found} entries, bank defines {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("enrichment needs a reporting guideline, got `{0}` ({1})")]
    WrongGuidelineKind(String, crate::guidelines::GuidelineKind),
    #[error("generation failed for sample `{sample_id}` (retryable: {retryable}): {source}")]
    Client {
        sample_id: String,
        retryable: bool,
        #[source]
        source: ClientError,
    },
    #[error("client returned an empty report for sample `{0}`")]
    EmptyReport(String),
    #[error("corrupt cache entry {entry}: {reason}")]
    CacheCorrupt { entry: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no generation client registered for endpoint `{0}`")]
    UnknownEndpoint(String),
}

impl EnrichmentError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EnrichmentError::Client { retryable: true, .. })
    }
}

/// A generated report and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedReport {
    pub sample_id: String,
    pub text: String,
    pub prompt_hash: String,
    pub client_id: String,
    pub created_at: DateTime<Utc>,
}

/// Returns the cached report for `(sample_id, prompt_hash, client_id)` or generates,
/// persists and returns a new one. A concurrent writer that loses the race gets the
/// winner's report back.
pub fn enrich(
    client: &dyn GenerationClient,
    request: &EnrichmentRequest<'_>,
    cache: &ReportCache,
) -> Result<EnrichedReport, EnrichmentError> {
    let prompt = build_lvlm_prompt(request);
    let sample_id = &request.sample.sample_id;
    if let Some(hit) = cache.lookup(sample_id, &prompt.prompt_hash, client.client_id())? {
        return Ok(hit);
    }
    let attachment = Attachment::image(request.sample.image_path.clone());
    let text = client
        .generate(&prompt.text, Some(&attachment))
        .map_err(|source| EnrichmentError::Client {
            sample_id: sample_id.clone(),
            retryable: source.is_transient(),
            source,
        })?;
    if text.trim().is_empty() {
        return Err(EnrichmentError::EmptyReport(sample_id.clone()));
    }
    cache.store(EnrichedReport {
        sample_id: sample_id.clone(),
        text,
        prompt_hash: prompt.prompt_hash,
        client_id: client.client_id().to_string(),
        created_at: Utc::now(),
    })
}

/// Enriches every record of `manifest` in order and returns the report text per sample id.
pub fn enrich_manifest(
    client: &dyn GenerationClient,
    manifest: &DatasetManifest,
    bank: &ConceptBank,
    guideline: &Guideline,
    options: &PromptOptions,
    cache: &ReportCache,
) -> Result<BTreeMap<String, String>, EnrichmentError> {
    let mut out = BTreeMap::new();
    for sample in &manifest.records {
        let request = EnrichmentRequest::new(sample, bank, guideline, options)?;
        let report = enrich(client, &request, cache)?;
        out.insert(report.sample_id, report.text);
    }
    Ok(out)
}

/// Fixed caption naming only the class label. Used as the contrastive text when
/// guideline-enriched reports are switched off.
pub fn label_caption(label: Label, modality: Modality) -> String {
    match modality {
        Modality::FieldGuide => format!("A photo of a bird of class {label}."),
        Modality::Ultrasound => format!("An ultrasound image of a {label} lesion."),
        Modality::Mammography => format!("A mammography image of a {label} lesion."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ConceptBank, SampleRecord};
    use crate::guidelines::{Guideline, GuidelineKind, GuidelineRegistry};
    use std::sync::Arc;

    fn sample() -> SampleRecord {
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let mut concepts = vec![false; bank.len()];
        concepts[bank.index_of("spiculated").unwrap()] = true;
        concepts[bank.index_of("hypoechoic").unwrap()] = true;
        SampleRecord {
            sample_id: "bus_0001".into(),
            patient_id: "p1".into(),
            image_path: "bus_0001.png".into(),
            concepts,
            label: Label::Malignant,
            birads: None,
            split_tag: None,
        }
    }

    #[test]
    fn second_call_is_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
        let s = sample();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let req = EnrichmentRequest::new(&s, &bank, g, &opts).unwrap();
        let client = StubReportClient::new();
        let first = enrich(&client, &req, &cache).unwrap();
        let second = enrich(&client, &req, &cache).unwrap();
        assert_eq!(client.calls(), 1);
        assert_eq!(first, second);
        assert_eq!(cache.stats().hits, 1);
        assert_eq!(cache.stats().misses, 1);
    }

    #[test]
    fn stub_report_echoes_concepts() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
        let s = sample();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let req = EnrichmentRequest::new(&s, &bank, g, &opts).unwrap();
        let report = enrich(&StubReportClient::new(), &req, &cache).unwrap();
        // independent rendering of the stub's sentence frame
        let expected = format!(
            "Findings present in the image: {}. Each finding is described according to the guideline provided.",
            ["Spiculated", "Hypoechoic"].join("; ")
        );
        assert_eq!(report.text, expected);
        assert_eq!(report.client_id, STUB_REPORT_CLIENT_ID);
    }

    #[test]
    fn guideline_edit_misses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
        let edited = Guideline::new(
            g.guideline_id.clone(),
            g.kind,
            g.modality,
            format!("{}\nAddendum.", g.text),
        )
        .unwrap();
        let s = sample();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let client = StubReportClient::new();
        let a = enrich(&client, &EnrichmentRequest::new(&s, &bank, g, &opts).unwrap(), &cache).unwrap();
        let b = enrich(&client, &EnrichmentRequest::new(&s, &bank, &edited, &opts).unwrap(), &cache)
            .unwrap();
        assert_ne!(a.prompt_hash, b.prompt_hash);
        assert_eq!(client.calls(), 2);
    }

    struct Failing;
    impl GenerationClient for Failing {
        fn client_id(&self) -> &str {
            "failing"
        }
        fn generate(&self, _: &str, _: Option<&Attachment>) -> Result<String, ClientError> {
            Err(ClientError::Transient("timeout".into()))
        }
    }

    #[test]
    fn client_failure_is_retryable_and_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
        let s = sample();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let req = EnrichmentRequest::new(&s, &bank, g, &opts).unwrap();
        let err = enrich(&Failing, &req, &cache).unwrap_err();
        assert!(err.is_retryable());
        assert!(err.to_string().contains("bus_0001"));
    }

    #[test]
    fn concurrent_enrichment_single_winner() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ReportCache::open(dir.path()).unwrap());
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap().clone();
        let s = sample();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let client = StubReportClient::new();
        let reports: Vec<EnrichedReport> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    scope.spawn(|| {
                        let req = EnrichmentRequest::new(&s, &bank, &g, &opts).unwrap();
                        enrich(&client, &req, &cache).unwrap()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(reports.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn captions_name_only_the_label() {
        assert_eq!(
            label_caption(Label::Benign, Modality::Ultrasound),
            "An ultrasound image of a benign lesion."
        );
    }
}
