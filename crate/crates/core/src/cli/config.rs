use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::corpus::ConceptBank;
use crate::encoder::EncoderConfig;
use crate::enrichment::{PromptOptions, STUB_REPORT_CLIENT_ID};
use crate::guidelines::{GuidelineRegistry, Modality};
use crate::reasoning::STUB_REASONING_CLIENT_ID;
use crate::training::{TrainConfig, VariantSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: PathBuf,
    /// Bundled bank id or path to a bank file.
    pub bank: String,
    pub modality: Modality,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichmentSection {
    #[serde(default = "default_report_client")]
    pub client: String,
    /// Directory of guideline files; the bundled set when absent.
    #[serde(default)]
    pub guideline_dir: Option<PathBuf>,
    /// Expected id of the reporting guideline, checked when set.
    #[serde(default)]
    pub guideline_id: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub prompt: Option<PromptOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub variant: VariantSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningSection {
    #[serde(default = "default_reasoning_client")]
    pub client: String,
    /// Expected id of the diagnostic guideline, checked when set.
    #[serde(default)]
    pub guideline_id: Option<String>,
    #[serde(default = "default_follow_up")]
    pub follow_up_keywords: Vec<String>,
    #[serde(default = "default_review_cases")]
    pub review_cases: usize,
    #[serde(default)]
    pub review_seed: u64,
}

impl Default for ReasoningSection {
    fn default() -> Self {
        Self {
            client: default_reasoning_client(),
            guideline_id: None,
            follow_up_keywords: default_follow_up(),
            review_cases: default_review_cases(),
            review_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub enrichment: EnrichmentSection,
    pub model: ModelSection,
    #[serde(default)]
    pub reasoning: ReasoningSection,
}

fn default_folds() -> usize {
    5
}

fn default_report_client() -> String {
    STUB_REPORT_CLIENT_ID.into()
}

fn default_reasoning_client() -> String {
    STUB_REASONING_CLIENT_ID.into()
}

fn default_retries() -> u32 {
    2
}

fn default_follow_up() -> Vec<String> {
    crate::reasoning::FollowUpRule::default().keywords
}

fn default_review_cases() -> usize {
    20
}

/// A loaded config plus the bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
    pub overrides: Vec<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to `table`. Values parse as TOML, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| CliError::Config {
        field: spec.to_string(),
        message: "override must look like `section.key=value`".into(),
    })?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one item");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config {
            field: path.to_string(),
            message: format!("`{k}` is not a table"),
        })?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn field_of(message: &str) -> String {
    // toml reports the offending key in backticks
    message
        .split('`')
        .nth(1)
        .map_or_else(|| "config".to_string(), str::to_string)
}

impl RunConfig {
    /// Reads `path`, applies overrides, resolves relative paths against the config file's
    /// directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
        let source = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut table: toml::Table = toml::from_str(&source).map_err(|e| CliError::Config {
            field: path.display().to_string(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            CliError::Config {
                field: field_of(e.message()),
                message: e.message().to_string(),
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(LoadedConfig {
            config,
            source,
            overrides: overrides.to_vec(),
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve(base, &self.output_dir);
        self.corpus.manifest = resolve(base, &self.corpus.manifest);
        if ConceptBank::builtin(&self.corpus.bank).is_none() {
            self.corpus.bank = resolve(base, Path::new(&self.corpus.bank)).display().to_string();
        }
        if let Some(d) = &mut self.enrichment.guideline_dir {
            *d = resolve(base, d);
        }
        if let Some(d) = &mut self.enrichment.cache_dir {
            *d = resolve(base, d);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, message: String| {
            Err(CliError::Config {
                field: field.into(),
                message,
            })
        };
        if !self.corpus.manifest.exists() {
            return bad(
                "corpus.manifest",
                format!("{} does not exist", self.corpus.manifest.display()),
            );
        }
        let bank = self.bank()?;
        if self.corpus.folds < 2 {
            return bad("corpus.folds", format!("need at least 2 folds, got {}", self.corpus.folds));
        }
        if let Some(d) = &self.enrichment.guideline_dir {
            if !d.is_dir() {
                return bad("enrichment.guideline_dir", format!("{} is not a directory", d.display()));
            }
        }
        if self.enrichment.client != STUB_REPORT_CLIENT_ID {
            return bad(
                "enrichment.client",
                format!("unknown client `{}` (available: {STUB_REPORT_CLIENT_ID})", self.enrichment.client),
            );
        }
        if self.reasoning.client != STUB_REASONING_CLIENT_ID {
            return bad(
                "reasoning.client",
                format!(
                    "unknown client `{}` (available: {STUB_REASONING_CLIENT_ID})",
                    self.reasoning.client
                ),
            );
        }
        if self.model.encoder.n_concepts != bank.len() {
            return bad(
                "model.encoder.n_concepts",
                format!("{} does not match bank size {}", self.model.encoder.n_concepts, bank.len()),
            );
        }
        self.model
            .encoder
            .validate()
            .map_err(|e| CliError::Config {
                field: "model.encoder".into(),
                message: e.to_string(),
            })?;
        self.model.variant.validate().map_err(|e| CliError::Config {
            field: "model.variant".into(),
            message: e.to_string(),
        })?;
        self.model.train.validate().map_err(|e| CliError::Config {
            field: "model.train".into(),
            message: e.to_string(),
        })?;
        self.registry()?;
        Ok(())
    }

    pub fn bank(&self) -> Result<ConceptBank, CliError> {
        if let Some(b) = ConceptBank::builtin(&self.corpus.bank) {
            return Ok(b);
        }
        let path = Path::new(&self.corpus.bank);
        if !path.exists() {
            return Err(CliError::Config {
                field: "corpus.bank".into(),
                message: format!("`{}` is neither a bundled bank nor an existing file", self.corpus.bank),
            });
        }
        Ok(ConceptBank::load(path)?)
    }

    pub fn registry(&self) -> Result<GuidelineRegistry, CliError> {
        match &self.enrichment.guideline_dir {
            Some(d) => Ok(GuidelineRegistry::load_dir(d)?),
            None => Ok(GuidelineRegistry::builtin()),
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.enrichment
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn prompt_options(&self) -> PromptOptions {
        self.enrichment
            .prompt
            .clone()
            .unwrap_or_else(|| PromptOptions::for_modality(self.corpus.modality))
    }

    /// Default configuration for a synthetic corpus written by `synth`.
    pub fn synthetic(manifest: PathBuf, bank: PathBuf, n_concepts: usize, seed: u64) -> Self {
        let mut train = TrainConfig::desk();
        train.seed = seed;
        Self {
            output_dir: PathBuf::from("run"),
            corpus: CorpusSection {
                manifest,
                bank: bank.display().to_string(),
                modality: Modality::Ultrasound,
                folds: default_folds(),
                seed,
            },
            enrichment: EnrichmentSection {
                client: default_report_client(),
                guideline_dir: None,
                guideline_id: None,
                cache_dir: None,
                max_retries: default_retries(),
                prompt: None,
            },
            model: ModelSection {
                encoder: EncoderConfig::tiny(n_concepts),
                variant: VariantSpec::medcbr(),
                train,
            },
            reasoning: ReasoningSection::default(),
        }
    }
}
