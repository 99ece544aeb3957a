use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::config::LoadedConfig;
use super::CliError;
use crate::digest::{sha256_hex, sha256_fields};

/// One entry of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub finished_at: String,
    pub config_sha256: String,
    pub artifacts: Vec<PathBuf>,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub commands: BTreeMap<String, CommandRecord>,
}

/// Layout of a run's output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn folds_path(&self) -> PathBuf {
        self.path("folds.json")
    }

    pub fn train_dir(&self, variant_slug: &str) -> PathBuf {
        self.path("train").join(variant_slug)
    }

    pub fn fold_dir(&self, variant_slug: &str, fold: usize) -> PathBuf {
        self.train_dir(variant_slug).join(format!("fold-{fold}"))
    }

    pub fn reason_dir(&self, variant_slug: &str, fold: usize) -> PathBuf {
        self.path("reason").join(variant_slug).join(format!("fold-{fold}"))
    }

    pub fn review_dir(&self) -> PathBuf {
        self.path("review")
    }

    /// Writes the config file verbatim, plus the resolved form when overrides were given.
    pub fn snapshot_config(&self, loaded: &LoadedConfig) -> Result<Vec<PathBuf>, CliError> {
        let verbatim = self.path("config.toml");
        write_file(&verbatim, loaded.source.as_bytes())?;
        let resolved = self.path("config.resolved.toml");
        let text = toml::to_string_pretty(&loaded.config).map_err(|e| CliError::Config {
            field: "config".into(),
            message: e.to_string(),
        })?;
        write_file(&resolved, text.as_bytes())?;
        Ok(vec![verbatim, resolved])
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load_summary(&self) -> Result<RunSummary, CliError> {
        let path = self.path("summary.json");
        if !path.exists() {
            return Ok(RunSummary::default());
        }
        read_json(&path)
    }

    /// Records a finished command in `summary.json`.
    pub fn record(
        &self,
        command: &str,
        loaded: &LoadedConfig,
        artifacts: Vec<PathBuf>,
        details: serde_json::Value,
    ) -> Result<(), CliError> {
        for a in &artifacts {
            if !a.exists() {
                return Err(CliError::Missing(format!(
                    "`{command}` did not produce {}",
                    a.display()
                )));
            }
        }
        let mut summary = self.load_summary()?;
        let config_sha256 = sha256_fields(
            std::iter::once(loaded.source.as_str()).chain(loaded.overrides.iter().map(String::as_str)),
        );
        summary.commands.insert(
            command.to_string(),
            CommandRecord {
                finished_at: Utc::now().to_rfc3339(),
                config_sha256,
                artifacts: artifacts
                    .into_iter()
                    .map(|a| a.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or(a))
                    .collect(),
                details,
            },
        );
        self.write_json("summary.json", &summary)?;
        Ok(())
    }
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(sha256_hex(bytes))
}
