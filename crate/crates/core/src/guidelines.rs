//! Guideline texts that condition report enrichment and reasoning.
//!
//! Assets live in a directory of `<modality>_<kind>.txt` files. Leading lines starting with
//! `%%` are asset metadata (`%% id: ...`, provenance notes) and are not part of the text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

const BUILTIN: [(&str, &str); 6] = [
    (
        "ultrasound_reporting.txt",
        include_str!("../assets/guidelines/ultrasound_reporting.txt"),
    ),
    (
        "ultrasound_diagnostic.txt",
        include_str!("../assets/guidelines/ultrasound_diagnostic.txt"),
    ),
    (
        "mammography_reporting.txt",
        include_str!("../assets/guidelines/mammography_reporting.txt"),
    ),
    (
        "mammography_diagnostic.txt",
        include_str!("../assets/guidelines/mammography_diagnostic.txt"),
    ),
    (
        "field_guide_reporting.txt",
        include_str!("../assets/guidelines/field_guide_reporting.txt"),
    ),
    (
        "field_guide_diagnostic.txt",
        include_str!("../assets/guidelines/field_guide_diagnostic.txt"),
    ),
];

#[derive(Debug, Error)]
pub enum GuidelineError {
    #[error("no {kind} guideline for {modality}; available: {}", available.join(", "))]
    NotFound {
        kind: GuidelineKind,
        modality: Modality,
        available: Vec<String>,
    },
    #[error("guideline `{0}` has empty text")]
    Empty(String),
    #[error("duplicate guideline for ({kind}, {modality})")]
    Duplicate { kind: GuidelineKind, modality: Modality },
    #[error("cannot parse `{0}`: expected <modality>_<kind>.txt")]
    BadFileName(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineKind {
    Reporting,
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Ultrasound,
    Mammography,
    FieldGuide,
}

impl GuidelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidelineKind::Reporting => "reporting",
            GuidelineKind::Diagnostic => "diagnostic",
        }
    }
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Ultrasound, Modality::Mammography, Modality::FieldGuide];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ultrasound => "ultrasound",
            Modality::Mammography => "mammography",
            Modality::FieldGuide => "field_guide",
        }
    }
}

impl fmt::Display for GuidelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidelineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reporting" => Ok(GuidelineKind::Reporting),
            "diagnostic" => Ok(GuidelineKind::Diagnostic),
            _ => Err(format!("unknown guideline kind `{s}`")),
        }
    }
}

impl FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guideline {
    pub guideline_id: String,
    pub kind: GuidelineKind,
    pub modality: Modality,
    pub text: String,
    pub version_hash: String,
}

impl Guideline {
    pub fn new(
        guideline_id: impl Into<String>,
        kind: GuidelineKind,
        modality: Modality,
        text: impl Into<String>,
    ) -> Result<Self, GuidelineError> {
        let guideline_id = guideline_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GuidelineError::Empty(guideline_id));
        }
        Ok(Self {
            version_hash: sha256_hex(&text),
            guideline_id,
            kind,
            modality,
            text,
        })
    }

    /// Parses an asset file body: `%%` header lines, then the text.
    pub fn from_asset(
        file_name: &str,
        body: &str,
    ) -> Result<Self, GuidelineError> {
        let stem = file_name.strip_suffix(".txt").unwrap_or(file_name);
        let (modality, kind) = [GuidelineKind::Reporting, GuidelineKind::Diagnostic]
            .into_iter()
            .find_map(|k| {
                stem.strip_suffix(&format!("_{}", k.as_str()))
                    .and_then(|m| m.parse::<Modality>().ok())
                    .map(|m| (m, k))
            })
            .ok_or_else(|| GuidelineError::BadFileName(file_name.to_string()))?;

        let mut id = stem.to_ascii_uppercase();
        let mut lines = body.lines().peekable();
        while let Some(line) = lines.next_if(|l| l.starts_with("%%")) {
            if let Some(v) = line.trim_start_matches('%').trim().strip_prefix("id:") {
                id = v.trim().to_string();
            }
        }
        let text = lines.collect::<Vec<_>>().join("\n");
        Guideline::new(id, kind, modality, text.trim_end())
    }

    /// Field-guide documents are a keyed map, one `== <species> ==` section per entry.
    pub fn field_guide_entry(&self, species: &str) -> Option<&str> {
        let header = format!("== {species} ==");
        let start = self.text.find(&header)? + header.len();
        let rest = &self.text[start..];
        let end = rest.find("\n== ").unwrap_or(rest.len());
        Some(rest[..end].trim())
    }

    pub fn verify_hash(&self) -> bool {
        sha256_hex(&self.text) == self.version_hash
    }
}

/// Immutable set of guidelines, one per `(kind, modality)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuidelineRegistry {
    entries: BTreeMap<(GuidelineKind, Modality), Guideline>,
}

impl GuidelineRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The bundled asset set.
    pub fn builtin() -> Self {
        Self::from_guidelines(
            BUILTIN
                .iter()
                .map(|(name, body)| Guideline::from_asset(name, body).expect("bundled guideline")),
        )
        .expect("bundled guidelines are unique")
    }

    pub fn from_guidelines(items: impl IntoIterator<Item = Guideline>) -> Result<Self, GuidelineError> {
        let mut entries = BTreeMap::new();
        for g in items {
            let key = (g.kind, g.modality);
            if entries.insert(key, g).is_some() {
                return Err(GuidelineError::Duplicate {
                    kind: key.0,
                    modality: key.1,
                });
            }
        }
        Ok(Self { entries })
    }

    /// Loads every `*.txt` in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, GuidelineError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| GuidelineError::Io { path, source }
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        let mut items = Vec::new();
        for p in paths {
            let body = std::fs::read_to_string(&p).map_err(io(&p))?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            items.push(Guideline::from_asset(&name, &body)?);
        }
        Self::from_guidelines(items)
    }

    /// Writes the registry back out as asset files.
    pub fn save_dir(&self, dir: &Path) -> Result<(), GuidelineError> {
        std::fs::create_dir_all(dir).map_err(|source| GuidelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for g in self.entries.values() {
            let path = dir.join(format!("{}_{}.txt", g.modality, g.kind));
            let body = format!("%% id: {}\n{}\n", g.guideline_id, g.text);
            std::fs::write(&path, body).map_err(|source| GuidelineError::Io { path, source })?;
        }
        Ok(())
    }

    pub fn get(&self, kind: GuidelineKind, modality: Modality) -> Result<&Guideline, GuidelineError> {
        self.entries
            .get(&(kind, modality))
            .ok_or_else(|| GuidelineError::NotFound {
                kind,
                modality,
                available: self
                    .entries
                    .keys()
                    .map(|(k, m)| format!("({k}, {m})"))
                    .collect(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Guideline> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
