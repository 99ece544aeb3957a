use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rubric::RubricScore;
use super::MetricsError;
use crate::corpus::Raster;
use crate::digest::sha256_hex;

const SEAL_FORMAT: &str = "medcbr-sealed-key-v1";
pub const BUNDLE_DIR: &str = "bundles";
pub const SEALED_DIR: &str = "sealed";
const KEY_FILE: &str = "key.sealed";
const STATE_FILE: &str = "state.json";
const TEMPLATE_FILE: &str = "rubric_template.csv";

/// Everything known about one candidate case. Only the image, prompt and explanation
/// reach the reviewer.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMaterial {
    pub sample_id: String,
    pub patient_id: String,
    pub image_path: PathBuf,
    pub prompt_text: String,
    pub explanation_text: String,
    pub y_true: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub case_id: String,
    pub sample_id: String,
    pub y_true: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct KeyPayload {
    seed: u64,
    entries: Vec<KeyEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SealedFile {
    format: String,
    sha256: String,
    payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
struct ReviewState {
    case_ids: Vec<String>,
    scores_imported: bool,
    scores_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleExport {
    pub bundle_dir: PathBuf,
    pub sealed_path: PathBuf,
    pub case_ids: Vec<String>,
}

#[derive(Serialize)]
struct CaseFile<'a> {
    case_id: &'a str,
    image: &'a str,
    prompt: &'a str,
    explanation: &'a str,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), MetricsError> {
    fs::write(path, bytes).map_err(MetricsError::io(path))
}

fn select(materials: &[CaseMaterial], n: usize, seed: u64) -> Result<Vec<&CaseMaterial>, MetricsError> {
    if n == 0 || n > materials.len() {
        return Err(MetricsError::Selection(format!(
            "cannot select {n} cases from {} available",
            materials.len()
        )));
    }
    let mut pool: Vec<&CaseMaterial> = materials.iter().collect();
    pool.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if pool.windows(2).any(|w| w[0].sample_id == w[1].sample_id) {
        return Err(MetricsError::Selection("duplicate sample ids among cases".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    Ok(pool)
}

/// Writes `n` seeded, blinded case bundles under `<out_dir>/bundles` and the sealed
/// case-to-label key under `<out_dir>/sealed`.
pub fn export_case_bundles(
    materials: &[CaseMaterial],
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<BundleExport, MetricsError> {
    let chosen = select(materials, n, seed)?;
    let bundle_dir = out_dir.join(BUNDLE_DIR);
    let sealed_dir = out_dir.join(SEALED_DIR);
    if bundle_dir.exists() {
        return Err(MetricsError::Selection(format!(
            "{} already exists; export into a fresh directory",
            bundle_dir.display()
        )));
    }
    fs::create_dir_all(&bundle_dir).map_err(MetricsError::io(&bundle_dir))?;
    fs::create_dir_all(&sealed_dir).map_err(MetricsError::io(&sealed_dir))?;

    let width = n.to_string().len().max(2);
    let mut entries = Vec::with_capacity(n);
    let mut template = String::from("case_id,reviewer_id,cints,cigs,bas\n");
    for (k, m) in chosen.iter().enumerate() {
        let case_id = format!("case-{:0width$}", k + 1);
        let dir = bundle_dir.join(&case_id);
        fs::create_dir_all(&dir).map_err(MetricsError::io(&dir))?;
        // re-encoding drops file names and ancillary chunks of the source image
        let image = Raster::load(&m.image_path).map_err(|e| MetricsError::Bundle(e.to_string()))?;
        image
            .save_png(&dir.join("image.png"))
            .map_err(|e| MetricsError::Bundle(e.to_string()))?;
        write(&dir.join("prompt.txt"), &m.prompt_text)?;
        write(&dir.join("explanation.txt"), &m.explanation_text)?;
        let case = CaseFile {
            case_id: &case_id,
            image: "image.png",
            prompt: "prompt.txt",
            explanation: "explanation.txt",
        };
        write(
            &dir.join("case.json"),
            serde_json::to_string_pretty(&case).expect("case serializes"),
        )?;
        template.push_str(&format!("{case_id},,,,\n"));
        entries.push(KeyEntry {
            case_id,
            sample_id: m.sample_id.clone(),
            y_true: m.y_true,
        });
    }
    write(&bundle_dir.join(TEMPLATE_FILE), template)?;

    let case_ids: Vec<String> = entries.iter().map(|e| e.case_id.clone()).collect();
    let payload = serde_json::to_vec(&KeyPayload { seed, entries }).expect("key serializes");
    let sealed = SealedFile {
        format: SEAL_FORMAT.into(),
        sha256: sha256_hex(&payload),
        payload: base64::engine::general_purpose::STANDARD.encode(&payload),
    };
    let sealed_path = sealed_dir.join(KEY_FILE);
    write(&sealed_path, serde_json::to_string(&sealed).expect("seal serializes"))?;
    save_state(
        out_dir,
        &ReviewState {
            case_ids: case_ids.clone(),
            ..ReviewState::default()
        },
    )?;
    Ok(BundleExport {
        bundle_dir,
        sealed_path,
        case_ids,
    })
}

fn state_path(review_dir: &Path) -> PathBuf {
    review_dir.join(SEALED_DIR).join(STATE_FILE)
}

fn load_state(review_dir: &Path) -> Result<ReviewState, MetricsError> {
    let path = state_path(review_dir);
    let raw = fs::read_to_string(&path).map_err(MetricsError::io(&path))?;
    serde_json::from_str(&raw).map_err(|e| MetricsError::Sealed(format!("{}: {e}", path.display())))
}

fn save_state(review_dir: &Path, state: &ReviewState) -> Result<(), MetricsError> {
    write(
        &state_path(review_dir),
        serde_json::to_string_pretty(state).expect("state serializes"),
    )
}

/// Records that reviewer scores were imported for the exported cases. Scores naming an
/// unknown case are rejected.
pub fn record_scores_imported(
    review_dir: &Path,
    scores: &[RubricScore],
    raw_file: &[u8],
) -> Result<(), MetricsError> {
    let mut state = load_state(review_dir)?;
    if let Some(s) = scores.iter().find(|s| !state.case_ids.contains(&s.case_id)) {
        return Err(MetricsError::Sealed(format!(
            "score for unknown case `{}`",
            s.case_id
        )));
    }
    if scores.is_empty() {
        return Err(MetricsError::Sealed("no scores to import".into()));
    }
    state.scores_imported = true;
    state.scores_sha256 = Some(sha256_hex(raw_file));
    save_state(review_dir, &state)
}

/// Opens the sealed key. Refused until scores have been imported.
pub fn unseal(review_dir: &Path) -> Result<Vec<KeyEntry>, MetricsError> {
    let state = load_state(review_dir)?;
    if !state.scores_imported {
        return Err(MetricsError::SealedUntilScored);
    }
    let path = review_dir.join(SEALED_DIR).join(KEY_FILE);
    let raw = fs::read_to_string(&path).map_err(MetricsError::io(&path))?;
    let sealed: SealedFile = serde_json::from_str(&raw)
        .map_err(|e| MetricsError::Sealed(format!("{}: {e}", path.display())))?;
    if sealed.format != SEAL_FORMAT {
        return Err(MetricsError::Sealed(format!("unknown key format `{}`", sealed.format)));
    }
    let payload = base64::engine::general_purpose::STANDARD
        .decode(sealed.payload.as_bytes())
        .map_err(|e| MetricsError::Sealed(format!("{}: {e}", path.display())))?;
    if sha256_hex(&payload) != sealed.sha256 {
        return Err(MetricsError::Sealed(format!(
            "{}: digest mismatch, key was modified",
            path.display()
        )));
    }
    let payload: KeyPayload = serde_json::from_slice(&payload)
        .map_err(|e| MetricsError::Sealed(format!("{}: {e}", path.display())))?;
    Ok(payload.entries)
}

/// Tokens that must never appear in reviewer-facing files: ground-truth field names,
/// cohort-count field names, and the source identifiers of every candidate case.
pub fn blinding_denylist(materials: &[CaseMaterial]) -> Vec<String> {
    let mut tokens: Vec<String> = [
        "y_true",
        "ground_truth",
        "pathology_label",
        "\"label\"",
        "n_benign",
        "n_malignant",
        "prevalence",
        "cohort_size",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in materials {
        tokens.push(m.sample_id.clone());
        tokens.push(m.patient_id.clone());
        if let Some(name) = m.image_path.file_name() {
            tokens.push(name.to_string_lossy().into_owned());
        }
    }
    tokens.retain(|t| t.len() >= 4);
    tokens.sort();
    tokens.dedup();
    tokens
}

/// Every `(file, token)` pair where a denylisted token occurs in a file under `dir`.
pub fn scan_for_tokens(dir: &Path, tokens: &[String]) -> Result<Vec<(PathBuf, String)>, MetricsError> {
    let mut hits = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(MetricsError::io(&d))? {
            let path = entry.map_err(MetricsError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let bytes = fs::read(&path).map_err(MetricsError::io(&path))?;
            for t in tokens {
                let needle = t.as_bytes();
                if bytes.windows(needle.len()).any(|w| w == needle) {
                    hits.push((path.clone(), t.clone()));
                }
            }
        }
    }
    hits.sort();
    Ok(hits)
}
