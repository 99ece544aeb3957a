use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompt::ReasoningPrompt;
use super::ReasoningError;
use crate::corpus::Birads;
use crate::enrichment::{ClientError, GenerationClient};

pub const STUB_REASONING_CLIENT_ID: &str = "stub-reasoning-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingStatus {
    Grounded,
    Ungrounded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingEntry {
    pub term: String,
    pub status: GroundingStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub raw_text: String,
    pub inferred_birads: Option<Birads>,
    pub follow_up: Option<String>,
    pub grounding_report: Vec<GroundingEntry>,
}

impl Explanation {
    pub fn ungrounded_terms(&self) -> impl Iterator<Item = &str> {
        self.grounding_report
            .iter()
            .filter(|g| g.status == GroundingStatus::Ungrounded)
            .map(|g| g.term.as_str())
    }
}

/// Keywords that mark the recommended follow-up sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpRule {
    pub keywords: Vec<String>,
}

impl Default for FollowUpRule {
    fn default() -> Self {
        Self {
            keywords: vec!["follow-up".into(), "biopsy".into(), "routine screening".into()],
        }
    }
}

fn birads_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bBI-?RADS(?:\s*[:\-]?\s*|\s+category\s+)(4\s*[ABC]|[235])\b")
            .expect("valid pattern")
    })
}

/// Last BI-RADS category stated in `text`, if any.
pub fn parse_birads(text: &str) -> Option<Birads> {
    birads_pattern()
        .captures_iter(text)
        .last()
        .and_then(|c| c[1].split_whitespace().collect::<String>().parse().ok())
}

fn sentence_bounds(text: &str, at: usize) -> (usize, usize) {
    let is_end = |c: char| matches!(c, '.' | '!' | '?' | '\n');
    let start = text[..at]
        .char_indices()
        .rev()
        .find(|&(i, c)| c == '\n' || (is_end(c) && text[i + 1..].starts_with(char::is_whitespace)))
        .map_or(0, |(i, c)| i + c.len_utf8());
    let end = text[at..]
        .char_indices()
        .find(|&(i, c)| {
            c == '\n'
                || (is_end(c)
                    && text[at + i + 1..]
                        .chars()
                        .next()
                        .is_none_or(char::is_whitespace))
        })
        .map_or(text.len(), |(i, c)| at + i + if c == '\n' { 0 } else { 1 });
    (start, end)
}

/// The sentence holding the earliest keyword match, trimmed. Matching ignores ASCII case.
pub fn parse_follow_up(text: &str, rule: &FollowUpRule) -> Option<String> {
    let lower = text.to_ascii_lowercase();
    let at = rule
        .keywords
        .iter()
        .filter(|k| !k.is_empty())
        .filter_map(|k| lower.find(&k.to_ascii_lowercase()))
        .min()?;
    let (s, e) = sentence_bounds(text, at);
    Some(text[s..e].trim().to_string())
}

/// Lowercase word sequence of `text`, split on anything that is not alphanumeric.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_seq(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Classifies every vocabulary term mentioned in `raw_text` as grounded when the prompt's
/// concept lines or guideline text mention it too.
pub fn validate_grounding(raw_text: &str, prompt: &ReasoningPrompt) -> Vec<GroundingEntry> {
    let text = normalize_words(raw_text);
    let lines = normalize_words(&prompt.concept_lines.join("\n"));
    let guideline = normalize_words(&prompt.guideline.text);
    let mut report: Vec<GroundingEntry> = Vec::new();
    for term in &prompt.concept_vocabulary {
        let words = normalize_words(term);
        if !contains_seq(&text, &words) || report.iter().any(|g| g.term == *term) {
            continue;
        }
        let grounded = contains_seq(&lines, &words) || contains_seq(&guideline, &words);
        report.push(GroundingEntry {
            term: term.clone(),
            status: if grounded {
                GroundingStatus::Grounded
            } else {
                GroundingStatus::Ungrounded
            },
        });
    }
    report
}

/// Parses and grounds a raw response.
pub fn parse_explanation(raw_text: &str, prompt: &ReasoningPrompt, rule: &FollowUpRule) -> Explanation {
    Explanation {
        raw_text: raw_text.to_string(),
        inferred_birads: parse_birads(raw_text),
        follow_up: parse_follow_up(raw_text, rule),
        grounding_report: validate_grounding(raw_text, prompt),
    }
}

/// Sends the rendered prompt (text only) and parses the answer.
pub fn generate_explanation(
    client: &dyn GenerationClient,
    prompt: &ReasoningPrompt,
    rule: &FollowUpRule,
) -> Result<Explanation, ReasoningError> {
    let raw = client
        .generate(&prompt.rendered, None)
        .map_err(|source| ReasoningError::Client {
            retryable: source.is_transient(),
            source,
        })?;
    if raw.trim().is_empty() {
        return Err(ReasoningError::EmptyExplanation);
    }
    Ok(parse_explanation(&raw, prompt, rule))
}

/// Deterministic reasoning client. It restates the diagnosis and every concept line of the
/// prompt, then names a category and a follow-up chosen from the diagnosis and the number
/// of listed concepts.
#[derive(Debug, Default)]
pub struct StubReasoningClient {
    calls: AtomicUsize,
}

impl StubReasoningClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn prompt_fields(prompt: &str) -> (String, Vec<(String, String)>) {
    static DIAG: OnceLock<Regex> = OnceLock::new();
    static LINE: OnceLock<Regex> = OnceLock::new();
    let diag = DIAG.get_or_init(|| Regex::new(r"AI system, which is ([^.]+)\.").expect("valid pattern"));
    let line = LINE.get_or_init(|| Regex::new(r"(?m)^(.+) \((\d+\.\d)%\)$").expect("valid pattern"));
    let diagnosis = diag
        .captures(prompt)
        .map_or_else(|| "unknown".to_string(), |c| c[1].to_string());
    let lines = line
        .captures_iter(prompt)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect();
    (diagnosis, lines)
}

impl GenerationClient for StubReasoningClient {
    fn client_id(&self) -> &str {
        STUB_REASONING_CLIENT_ID
    }

    fn generate(
        &self,
        prompt: &str,
        _attachment: Option<&crate::enrichment::Attachment>,
    ) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (diagnosis, lines) = prompt_fields(prompt);
        let suspicious = diagnosis == "malignant" || diagnosis == "positive";
        let mut out = format!("The predicted diagnosis is {diagnosis}.");
        if lines.is_empty() {
            out.push_str(" No concepts were detected above threshold.");
        }
        for (name, score) in &lines {
            out.push_str(&format!(" {name} was detected with a score of {score}%."));
        }
        let (category, follow_up) = match (suspicious, lines.len()) {
            (true, n) if n >= 3 => ("5", "Recommended follow-up: tissue biopsy."),
            (true, _) => ("4B", "Recommended follow-up: ultrasound-guided biopsy."),
            (false, 0) => ("2", "Recommended follow-up: routine screening."),
            (false, _) => ("3", "Recommended follow-up: short-interval follow-up imaging in 6 months."),
        };
        out.push_str(&format!(
            " Taken together with the guideline, the findings are most consistent with BI-RADS {category}. {follow_up}"
        ));
        Ok(out)
    }
}

/// On-disk record of one explanation for the review workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTranscript {
    pub sample_id: String,
    pub client_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub raw_text: String,
    pub inferred_birads: Option<Birads>,
    pub follow_up: Option<String>,
    pub grounding_report: Vec<GroundingEntry>,
    pub created_at: DateTime<Utc>,
}

impl ExplanationTranscript {
    pub fn new(
        sample_id: &str,
        client_id: &str,
        prompt: &ReasoningPrompt,
        explanation: &Explanation,
    ) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            client_id: client_id.to_string(),
            prompt_hash: prompt.prompt_hash.clone(),
            prompt: prompt.rendered.clone(),
            raw_text: explanation.raw_text.clone(),
            inferred_birads: explanation.inferred_birads,
            follow_up: explanation.follow_up.clone(),
            grounding_report: explanation.grounding_report.clone(),
            created_at: Utc::now(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ReasoningError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(ReasoningError::io(parent))?;
        }
        let json = serde_json::to_string_pretty(self).expect("transcript serializes");
        std::fs::write(path, json).map_err(ReasoningError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, ReasoningError> {
        let text = std::fs::read_to_string(path).map_err(ReasoningError::io(path))?;
        serde_json::from_str(&text).map_err(|e| ReasoningError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
