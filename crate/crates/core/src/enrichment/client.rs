use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::{CONCEPT_BLOCK_HEADER, REPORT_INSTRUCTION};

pub const STUB_REPORT_CLIENT_ID: &str = "stub-report-v1";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("permanent failure: {0}")]
    Permanent(String),
}

impl ClientError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transient(_))
    }
}

/// Opaque payload sent alongside the prompt. Clients decide whether and how to use it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attachment {
    Image(PathBuf),
}

impl Attachment {
    pub fn image(path: PathBuf) -> Self {
        Attachment::Image(path)
    }
}

/// A text generation backend (report writer or reasoning model).
pub trait GenerationClient: Send + Sync {
    fn client_id(&self) -> &str;
    fn generate(&self, prompt: &str, attachment: Option<&Attachment>) -> Result<String, ClientError>;
}

/// Client configuration block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub max_retries: u32,
}

fn default_timeout() -> u64 {
    60
}

impl ClientConfig {
    pub fn stub(endpoint_id: &str) -> Self {
        Self {
            endpoint_id: endpoint_id.to_string(),
            timeout_secs: default_timeout(),
            max_retries: 0,
        }
    }
}

/// Retries transient failures up to `max_retries` extra attempts.
pub struct RetryingClient<C> {
    inner: C,
    max_retries: u32,
}

impl<C: GenerationClient> RetryingClient<C> {
    pub fn new(inner: C, max_retries: u32) -> Self {
        Self { inner, max_retries }
    }
}

impl<C: GenerationClient> GenerationClient for RetryingClient<C> {
    fn client_id(&self) -> &str {
        self.inner.client_id()
    }

    fn generate(&self, prompt: &str, attachment: Option<&Attachment>) -> Result<String, ClientError> {
        let mut attempt = 0;
        loop {
            match self.inner.generate(prompt, attachment) {
                Err(e) if e.is_transient() && attempt < self.max_retries => attempt += 1,
                other => return other,
            }
        }
    }
}

/// Deterministic offline report writer. Ignores the attachment and echoes the prompt's
/// concept lines into a fixed sentence frame.
#[derive(Debug, Default)]
pub struct StubReportClient {
    calls: AtomicUsize,
}

impl StubReportClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn concepts_in(prompt: &str) -> Vec<&str> {
        let Some(start) = prompt.find(CONCEPT_BLOCK_HEADER) else {
            return Vec::new();
        };
        let block = &prompt[start + CONCEPT_BLOCK_HEADER.len()..];
        let block = &block[..block.find(REPORT_INSTRUCTION).unwrap_or(block.len())];
        block
            .lines()
            .filter_map(|l| l.strip_suffix(": 1"))
            .collect()
    }
}

impl GenerationClient for StubReportClient {
    fn client_id(&self) -> &str {
        STUB_REPORT_CLIENT_ID
    }

    fn generate(&self, prompt: &str, _attachment: Option<&Attachment>) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let names = Self::concepts_in(prompt);
        let findings = if names.is_empty() {
            "none of the listed concepts".to_string()
        } else {
            names.join("; ")
        };
        Ok(format!(
            "Findings present in the image: {findings}. Each finding is described according to the guideline provided."
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures_left: Mutex<u32>,
    }

    impl GenerationClient for Flaky {
        fn client_id(&self) -> &str {
            "flaky"
        }
        fn generate(&self, _: &str, _: Option<&Attachment>) -> Result<String, ClientError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                Err(ClientError::Transient("busy".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn retries_transient_failures() {
        let c = RetryingClient::new(Flaky { failures_left: Mutex::new(2) }, 2);
        assert_eq!(c.generate("p", None).unwrap(), "ok");
        let c = RetryingClient::new(Flaky { failures_left: Mutex::new(3) }, 2);
        assert!(c.generate("p", None).is_err());
    }

    #[test]
    fn stub_with_no_concepts() {
        let stub = StubReportClient::new();
        let prompt = format!("{CONCEPT_BLOCK_HEADER}\n\n{REPORT_INSTRUCTION}\n");
        assert!(stub.generate(&prompt, None).unwrap().contains("none of the listed concepts"));
        assert_eq!(stub.calls(), 1);
    }
}
