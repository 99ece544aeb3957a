use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConceptBank, CorpusError};

/// Records carrying this split tag are training-only auxiliary data: they join every
/// training split and never a test fold.
pub const TRAIN_ONLY_TAG: &str = "train_only";

const COLUMNS: [&str; 6] = ["sample_id", "patient_id", "image_path", "label", "birads", "concepts"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malignant,
    /// Class index for non-medical corpora.
    Class(u32),
}

impl Label {
    pub fn index(self) -> u32 {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
            Label::Class(k) => k,
        }
    }

    /// `Some(true)` for the positive class of a binary task.
    pub fn as_binary(self) -> Option<bool> {
        match self.index() {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Benign => f.write_str("benign"),
            Label::Malignant => f.write_str("malignant"),
            Label::Class(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => other
                .parse::<u32>()
                .map(Label::Class)
                .map_err(|_| format!("`{s}` is not benign, malignant or a class index")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Birads {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "4A")]
    FourA,
    #[serde(rename = "4B")]
    FourB,
    #[serde(rename = "4C")]
    FourC,
    #[serde(rename = "5")]
    Five,
}

impl Birads {
    pub const ALL: [Birads; 6] = [
        Birads::Two,
        Birads::Three,
        Birads::FourA,
        Birads::FourB,
        Birads::FourC,
        Birads::Five,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Birads::Two => "2",
            Birads::Three => "3",
            Birads::FourA => "4A",
            Birads::FourB => "4B",
            Birads::FourC => "4C",
            Birads::Five => "5",
        }
    }
}

impl fmt::Display for Birads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Birads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Birads::ALL
            .into_iter()
            .find(|b| b.as_str() == upper)
            .ok_or_else(|| format!("`{s}` is not a BI-RADS category (2, 3, 4A, 4B, 4C, 5)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub patient_id: String,
    pub image_path: PathBuf,
    pub concepts: Vec<bool>,
    pub label: Label,
    pub birads: Option<Birads>,
    pub split_tag: Option<String>,
}

impl SampleRecord {
    pub fn is_train_only(&self) -> bool {
        self.split_tag.as_deref() == Some(TRAIN_ONLY_TAG)
    }

    pub fn concept_string(&self) -> String {
        self.concepts.iter().map(|&c| if c { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub corpus_name: String,
    pub bank_id: String,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices grouped by patient, in patient-id order.
    pub fn patients(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.patient_id.as_str()).or_default().push(i);
        }
        out
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }
}

fn schema_err(row: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        row,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Loads and validates a manifest against `bank`.
///
/// Relative image paths resolve against the manifest's directory. The corpus name is the
/// manifest file stem. Row numbers in errors count data rows from 1.
pub fn load_manifest(path: &Path, bank: &ConceptBank) -> Result<DatasetManifest, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = column(name).ok_or_else(|| schema_err(0, name, "missing column in header"))?;
    }
    let split_col = column("split_tag");
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| schema_err(row_no, "row", e.to_string()))?;
        let field = |col: usize| row.get(col).unwrap_or("").trim();

        let sample_id = field(idx[0]);
        if sample_id.is_empty() {
            return Err(schema_err(row_no, "sample_id", "empty"));
        }
        let patient_id = field(idx[1]);
        if patient_id.is_empty() {
            return Err(schema_err(row_no, "patient_id", "empty"));
        }
        let image = field(idx[2]);
        if image.is_empty() {
            return Err(schema_err(row_no, "image_path", "empty"));
        }
        let label: Label = field(idx[3])
            .parse()
            .map_err(|m: String| schema_err(row_no, "label", m))?;
        let birads = match field(idx[4]) {
            "" => None,
            s => Some(s.parse().map_err(|m: String| schema_err(row_no, "birads", m))?),
        };
        let concepts = field(idx[5])
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(schema_err(
                    row_no,
                    "concepts",
                    format!("unexpected character `{other}`, expected 0 or 1"),
                )),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if concepts.len() != bank.len() {
            return Err(CorpusError::ConceptLength {
                sample_id: sample_id.to_string(),
                bank_id: bank.bank_id().to_string(),
                expected: bank.len(),
                found: concepts.len(),
            });
        }
        let split_tag = split_col
            .map(|c| field(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);

        if !seen.insert(sample_id.to_string()) {
            return Err(CorpusError::DuplicateSample(sample_id.to_string()));
        }
        let image_path = {
            let p = PathBuf::from(image);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        if !image_path.exists() {
            return Err(CorpusError::MissingImage {
                sample_id: sample_id.to_string(),
                path: image_path,
            });
        }
        records.push(SampleRecord {
            sample_id: sample_id.to_string(),
            patient_id: patient_id.to_string(),
            image_path,
            concepts,
            label,
            birads,
            split_tag,
        });
    }

    Ok(DatasetManifest {
        corpus_name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        bank_id: bank.bank_id().to_string(),
        records,
    })
}

/// Writes `manifest` to `path`. Image paths under the manifest's directory are written
/// relative to it.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let with_tags = manifest.records.iter().any(|r| r.split_tag.is_some());
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if with_tags {
        header.push("split_tag");
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for r in &manifest.records {
        let image = r
            .image_path
            .strip_prefix(base)
            .unwrap_or(&r.image_path)
            .to_string_lossy()
            .into_owned();
        let mut row = vec![
            r.sample_id.clone(),
            r.patient_id.clone(),
            image,
            r.label.to_string(),
            r.birads.map(|b| b.to_string()).unwrap_or_default(),
            r.concept_string(),
        ];
        if with_tags {
            row.push(r.split_tag.clone().unwrap_or_default());
        }
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(CorpusError::io(path))
}
