//! Fixed feature extractors feeding the trainable projections.
//!
//! `tiny-pool16` summarizes each 16×16 block of a 224×224 image by its mean and the RMS of
//! horizontal and vertical pixel differences. `precomputed:<csv>` reads per-sample feature
//! vectors exported from an external image encoder. `tiny-hash1024` maps a report to a
//! normalized bag of hashed tokens.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::corpus::{Raster, MODEL_INPUT_SIZE};

use super::EncoderError;

pub const TINY_VISION_ID: &str = "tiny-pool16";
pub const TINY_TEXT_ID: &str = "tiny-hash1024";
pub const PRECOMPUTED_PREFIX: &str = "precomputed:";

const BLOCK: usize = 16;
const GRID: usize = MODEL_INPUT_SIZE as usize / BLOCK;
const DIFF_GAIN: f64 = 4.0;
pub const TINY_VISION_DIM: usize = GRID * GRID * 3;
pub const TEXT_VOCAB: usize = 1024;

#[derive(Debug, Clone)]
pub enum VisionBackbone {
    TinyPool,
    Precomputed {
        path: PathBuf,
        dim: usize,
        features: HashMap<String, Vec<f64>>,
    },
}

impl VisionBackbone {
    pub fn from_id(id: &str) -> Result<Self, EncoderError> {
        if id == TINY_VISION_ID {
            return Ok(Self::TinyPool);
        }
        if let Some(path) = id.strip_prefix(PRECOMPUTED_PREFIX) {
            return Self::load_precomputed(Path::new(path));
        }
        Err(EncoderError::UnsupportedBackbone(id.to_string()))
    }

    /// Reads `sample_id,f0,f1,...` rows.
    fn load_precomputed(path: &Path) -> Result<Self, EncoderError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| EncoderError::Backbone(format!("{}: {e}", path.display())))?;
        let mut features = HashMap::new();
        let mut dim = None;
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| EncoderError::Backbone(format!("{}: {e}", path.display())))?;
            let id = row.get(0).unwrap_or_default().to_string();
            let values = row
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| {
                    EncoderError::Backbone(format!("{} row {}: {e}", path.display(), i + 1))
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EncoderError::Backbone(format!(
                        "{} row {}: {} features, expected {d}",
                        path.display(),
                        i + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            features.insert(id, values);
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| {
            EncoderError::Backbone(format!("{} holds no feature rows", path.display()))
        })?;
        Ok(Self::Precomputed {
            path: path.to_path_buf(),
            dim,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::TinyPool => TINY_VISION_DIM,
            Self::Precomputed { dim, .. } => *dim,
        }
    }

    /// Whether features depend on pixel content (and therefore on augmentation).
    pub fn reads_pixels(&self) -> bool {
        matches!(self, Self::TinyPool)
    }

    pub fn features(&self, sample_id: &str, image: &Raster) -> Result<Vec<f64>, EncoderError> {
        match self {
            Self::TinyPool => pool_features(image),
            Self::Precomputed { features, path, .. } => features
                .get(sample_id)
                .cloned()
                .ok_or_else(|| {
                    EncoderError::Backbone(format!(
                        "no precomputed features for `{sample_id}` in {}",
                        path.display()
                    ))
                }),
        }
    }
}

/// Block statistics of a model-input image.
pub fn pool_features(image: &Raster) -> Result<Vec<f64>, EncoderError> {
    let side = MODEL_INPUT_SIZE;
    if image.width() != side || image.height() != side {
        return Err(EncoderError::ShapeMismatch(format!(
            "image is {}x{}, expected {side}x{side}",
            image.width(),
            image.height()
        )));
    }
    let side = side as usize;
    let px = image.data();
    let at = |x: usize, y: usize| px[y * side + x] as f64;
    let mut out = Vec::with_capacity(TINY_VISION_DIM);
    for by in 0..GRID {
        for bx in 0..GRID {
            let (x0, y0) = (bx * BLOCK, by * BLOCK);
            let mut sum = 0.0;
            let mut dx2 = 0.0;
            let mut dy2 = 0.0;
            for y in y0..y0 + BLOCK {
                for x in x0..x0 + BLOCK {
                    let v = at(x, y);
                    sum += v;
                    if x + 1 < x0 + BLOCK {
                        dx2 += (at(x + 1, y) - v).powi(2);
                    }
                    if y + 1 < y0 + BLOCK {
                        dy2 += (at(x, y + 1) - v).powi(2);
                    }
                }
            }
            let n_diff = (BLOCK * (BLOCK - 1)) as f64;
            out.push(sum / (BLOCK * BLOCK) as f64 - 0.5);
            out.push(DIFF_GAIN * (dx2 / n_diff).sqrt());
            out.push(DIFF_GAIN * (dy2 / n_diff).sqrt());
        }
    }
    Ok(out)
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed bag-of-tokens text featurizer. Bucket 0 holds a start token present in every
/// input, so an empty report still has a defined embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashTokenizer {
    pub vocab: usize,
    pub max_tokens: usize,
}

impl HashTokenizer {
    pub fn from_id(id: &str, max_tokens: usize) -> Result<Self, EncoderError> {
        if id != TINY_TEXT_ID {
            return Err(EncoderError::UnsupportedBackbone(id.to_string()));
        }
        if max_tokens == 0 {
            return Err(EncoderError::ShapeMismatch("max_tokens must be positive".into()));
        }
        Ok(Self {
            vocab: TEXT_VOCAB,
            max_tokens,
        })
    }

    pub fn bucket(&self, token: &str) -> usize {
        1 + (fnv1a(token.as_bytes()) % (self.vocab as u64 - 1)) as usize
    }

    /// L2-normalized bucket counts over the start token and at most `max_tokens - 1`
    /// text tokens.
    pub fn features(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            log::warn!("empty report text; embedding only the start token");
        }
        let mut counts = vec![0.0; self.vocab];
        counts[0] = 1.0;
        for t in tokens.iter().take(self.max_tokens.saturating_sub(1)) {
            counts[self.bucket(t)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        counts.iter_mut().for_each(|c| *c /= norm);
        counts
    }
}
