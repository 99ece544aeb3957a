use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

const BREAST_US: &str = include_str!("../../assets/banks/breast_us.csv");
const MAMMOGRAPHY: &str = include_str!("../../assets/banks/mammography.csv");
const CUB: &str = include_str!("../../assets/banks/cub.csv");

/// Attribute names cycled through by [`ConceptBank::synthetic`].
const SYNTHETIC_KEYS: [&str; 6] = [
    "bright_spot",
    "striped_texture",
    "sharp_margin",
    "dense_core",
    "banded_patch",
    "crisp_rim",
];

/// Human-readable name for a snake_case concept key: underscores become spaces, the first
/// letter is upper-cased and the rest lower-cased.
pub fn display_name(key: &str) -> String {
    let spaced = key.replace('_', " ");
    let mut chars = spaced.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub key: String,
    pub display_name: String,
    pub category: String,
}

impl ConceptEntry {
    pub fn new(key: impl Into<String>, category: impl Into<String>) -> Self {
        let key = key.into();
        Self {
            display_name: display_name(&key),
            key,
            category: category.into(),
        }
    }
}

/// An ordered set of named concepts. Position `i` is the identity of concept `c_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptBank {
    bank_id: String,
    entries: Vec<ConceptEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct BankRow {
    key: String,
    display_name: String,
    category: String,
}

impl ConceptBank {
    pub fn new(bank_id: impl Into<String>, entries: Vec<ConceptEntry>) -> Result<Self, CorpusError> {
        let bank_id = bank_id.into();
        if entries.is_empty() {
            return Err(CorpusError::InvalidBank(format!("bank `{bank_id}` is empty")));
        }
        let mut seen = HashSet::new();
        for entry in &entries {
            if entry.key.is_empty()
                || !entry
                    .key
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            {
                return Err(CorpusError::InvalidBank(format!(
                    "key `{}` is not snake_case",
                    entry.key
                )));
            }
            if !seen.insert(entry.key.as_str()) {
                return Err(CorpusError::InvalidBank(format!("duplicate key `{}`", entry.key)));
            }
            let expected = display_name(&entry.key);
            if entry.display_name != expected {
                return Err(CorpusError::InvalidBank(format!(
                    "display name `{}` for key `{}` should be `{expected}`",
                    entry.display_name, entry.key
                )));
            }
        }
        Ok(Self { bank_id, entries })
    }

    /// Bundled banks: `breast_us` (15), `mammography` (31) and `cub` (112).
    pub fn builtin(bank_id: &str) -> Option<Self> {
        let text = match bank_id {
            "breast_us" => BREAST_US,
            "mammography" => MAMMOGRAPHY,
            "cub" => CUB,
            _ => return None,
        };
        Some(Self::parse(bank_id, text.as_bytes(), Path::new(bank_id)).expect("bundled bank is valid"))
    }

    /// A bank of `n` visual attributes for the synthetic corpus.
    pub fn synthetic(n: usize) -> Self {
        let entries = (0..n)
            .map(|i| {
                let base = SYNTHETIC_KEYS[i % SYNTHETIC_KEYS.len()];
                let key = if i < SYNTHETIC_KEYS.len() {
                    base.to_string()
                } else {
                    format!("{base}_{}", i / SYNTHETIC_KEYS.len() + 1)
                };
                ConceptEntry::new(key, "synthetic")
            })
            .collect();
        Self::new(format!("synthetic_{n}"), entries).expect("synthetic keys are unique")
    }

    /// Reads a `key,display_name,category` file. The bank id is the file stem.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path).map_err(CorpusError::io(path))?;
        let bank_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bank".to_string());
        Self::parse(&bank_id, bytes.as_slice(), path)
    }

    fn parse(bank_id: &str, reader: impl std::io::Read, path: &Path) -> Result<Self, CorpusError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<BankRow>().enumerate() {
            let row = row.map_err(|source| CorpusError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            if row.display_name != display_name(&row.key) {
                return Err(CorpusError::Schema {
                    row: i + 1,
                    field: "display_name".into(),
                    message: format!("expected `{}`", display_name(&row.key)),
                });
            }
            entries.push(ConceptEntry {
                key: row.key,
                display_name: row.display_name,
                category: row.category,
            });
        }
        Self::new(bank_id, entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut wtr = csv::Writer::from_path(path).map_err(|source| CorpusError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        for e in &self.entries {
            wtr.serialize(BankRow {
                key: e.key.clone(),
                display_name: e.display_name.clone(),
                category: e.category.clone(),
            })
            .map_err(|source| CorpusError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        }
        wtr.flush().map_err(CorpusError::io(path))
    }

    pub fn bank_id(&self) -> &str {
        &self.bank_id
    }

    pub fn entries(&self) -> &[ConceptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn display_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.display_name.as_str())
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.key == key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_rule() {
        assert_eq!(display_name("skin_thickening"), "Skin thickening");
        assert_eq!(display_name("spiculated"), "Spiculated");
        assert_eq!(display_name("regular_shape"), "Regular shape");
        assert_eq!(display_name(""), "");
    }

    #[test]
    fn builtin_sizes() {
        assert_eq!(ConceptBank::builtin("breast_us").unwrap().len(), 15);
        assert_eq!(ConceptBank::builtin("mammography").unwrap().len(), 31);
        assert_eq!(ConceptBank::builtin("cub").unwrap().len(), 112);
        assert!(ConceptBank::builtin("nope").is_none());
    }

    #[test]
    fn ultrasound_contains_named_concepts() {
        let bank = ConceptBank::builtin("breast_us").unwrap();
        for key in ["shadowing", "spiculated", "hypoechoic", "regular_shape"] {
            assert!(bank.index_of(key).is_some(), "{key}");
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_keys() {
        let dup = vec![ConceptEntry::new("a", "x"), ConceptEntry::new("a", "y")];
        assert!(ConceptBank::new("b", dup).is_err());
        assert!(ConceptBank::new("b", vec![ConceptEntry::new("Bad Key", "x")]).is_err());
    }

    #[test]
    fn save_load_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("breast_us.csv");
        let bank = ConceptBank::builtin("breast_us").unwrap();
        bank.save(&path).unwrap();
        assert_eq!(ConceptBank::load(&path).unwrap(), bank);
    }

    #[test]
    fn synthetic_bank_unique_beyond_cycle() {
        let bank = ConceptBank::synthetic(14);
        assert_eq!(bank.len(), 14);
        assert_eq!(bank.entries()[6].key, "bright_spot_2");
    }
}
