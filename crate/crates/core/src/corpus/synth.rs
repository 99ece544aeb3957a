//! Synthetic concept-encoded corpus.
//!
//! Every concept owns a cell of a square grid laid over the image and switches one visual
//! attribute inside it:
//!
//! * `Intensity`: a bright disk is present or absent.
//! * `Texture`: a striped patch (zero-mean modulation) is present or absent.
//! * `Boundary`: a disk is always drawn; its edge is sharp when the concept is on and
//!   blurred when it is off, so only edge energy carries the concept.
//!
//! The label is a threshold rule over the concept vector, stored with every per-sample
//! rendering parameter in a sidecar so the images and an exact oracle can be rebuilt.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    save_manifest, ConceptBank, CorpusError, DatasetManifest, Label, Raster, SampleRecord,
    MODEL_INPUT_SIZE,
};

pub const GENERATOR_VERSION: &str = "grid-attributes-v1";
const NOISE_SIGMA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Intensity,
    Texture,
    Boundary,
}

impl AttributeKind {
    fn for_concept(i: usize) -> Self {
        match i % 3 {
            0 => AttributeKind::Intensity,
            1 => AttributeKind::Texture,
            _ => AttributeKind::Boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeParams {
    pub kind: AttributeKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub contrast: f64,
}

/// `label = [ sum_i weights[i] * c_i >= threshold ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl LabelRule {
    /// Majority vote over the first three concepts.
    pub fn majority_of_first_three(n_concepts: usize) -> Self {
        let mut weights = vec![0.0; n_concepts];
        weights.iter_mut().take(3).for_each(|w| *w = 1.0);
        Self {
            weights,
            threshold: 2.0,
        }
    }

    pub fn score(&self, concepts: &[bool]) -> f64 {
        self.weights
            .iter()
            .zip(concepts)
            .map(|(w, &c)| if c { *w } else { 0.0 })
            .sum()
    }

    pub fn apply(&self, concepts: &[bool]) -> bool {
        self.score(concepts) >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub sample_id: String,
    pub patient_id: String,
    pub concepts: Vec<bool>,
    pub malignant: bool,
    pub background: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub attributes: Vec<AttributeParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub generator: String,
    pub seed: u64,
    pub image_size: u32,
    pub grid: u32,
    pub bank_id: String,
    pub label_rule: LabelRule,
    pub samples: Vec<SynthSample>,
}

impl SynthSidecar {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(CorpusError::io(path))?;
        serde_json::from_str(&text).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub sidecar: SynthSidecar,
    pub manifest_path: PathBuf,
    pub bank_path: PathBuf,
    pub sidecar_path: PathBuf,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rebuilds a sample's image from its sidecar parameters.
pub fn render(sample: &SynthSample, size: u32) -> Raster {
    let mut px = vec![sample.background; (size * size) as usize];
    for (attr, &on) in sample.attributes.iter().zip(&sample.concepts) {
        let edge_width = match (attr.kind, on) {
            (AttributeKind::Intensity, false) | (AttributeKind::Texture, false) => continue,
            (AttributeKind::Boundary, true) => 0.35,
            (AttributeKind::Boundary, false) => 6.0,
            _ => 1.0,
        };
        let reach = attr.radius + 4.0 * edge_width + 2.0;
        let x0 = (attr.cx - reach).floor().max(0.0) as u32;
        let x1 = ((attr.cx + reach).ceil() as u32).min(size - 1);
        let y0 = (attr.cy - reach).floor().max(0.0) as u32;
        let y1 = ((attr.cy + reach).ceil() as u32).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - attr.cx;
                let dy = y as f64 - attr.cy;
                let v = match attr.kind {
                    AttributeKind::Texture => {
                        if dx.abs() <= attr.radius && dy.abs() <= attr.radius {
                            let phase = (x as f64 * std::f64::consts::TAU / 6.0).sin();
                            0.5 * attr.contrast * phase.signum()
                        } else {
                            0.0
                        }
                    }
                    _ => {
                        let dist = (dx * dx + dy * dy).sqrt();
                        attr.contrast * sigmoid((attr.radius - dist) / edge_width)
                    }
                };
                px[(y * size + x) as usize] += v;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample.noise_seed);
    let noise = Normal::new(0.0, sample.noise_sigma).expect("valid sigma");
    let data = px
        .into_iter()
        .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Raster::new(size, size, data)
}

fn grid_side(n_concepts: usize) -> u32 {
    (n_concepts as f64).sqrt().ceil() as u32
}

/// Generates `n` samples over `bank` into `out_dir`: `images/*.png`, `synthetic.csv`
/// (manifest), `<bank_id>.csv` (bank) and `synthetic.sidecar.json`.
pub fn synth_generate(
    n: usize,
    bank: &ConceptBank,
    seed: u64,
    out_dir: &Path,
) -> Result<SynthCorpus, CorpusError> {
    if bank.len() < 4 {
        return Err(CorpusError::InvalidBank(format!(
            "synthetic generation needs at least 4 concepts, bank `{}` has {}",
            bank.bank_id(),
            bank.len()
        )));
    }
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(CorpusError::io(&image_dir))?;

    let n_c = bank.len();
    let size = MODEL_INPUT_SIZE;
    let grid = grid_side(n_c);
    let cell = size as f64 / grid as f64;
    let rule = LabelRule::majority_of_first_three(n_c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Vec::with_capacity(n);
    let mut patient = 0usize;
    let mut left_for_patient = 0usize;
    for i in 0..n {
        if left_for_patient == 0 {
            patient += 1;
            left_for_patient = rng.random_range(1..=3);
        }
        left_for_patient -= 1;

        let concepts: Vec<bool> = (0..n_c).map(|_| rng.random_bool(0.5)).collect();
        let attributes = (0..n_c)
            .map(|j| {
                let (row, col) = ((j as u32) / grid, (j as u32) % grid);
                let jitter = 0.1 * cell;
                AttributeParams {
                    kind: AttributeKind::for_concept(j),
                    cx: (col as f64 + 0.5) * cell + rng.random_range(-jitter..=jitter),
                    cy: (row as f64 + 0.5) * cell + rng.random_range(-jitter..=jitter),
                    radius: rng.random_range(0.18..=0.26) * cell,
                    contrast: rng.random_range(0.25..=0.40),
                }
            })
            .collect();
        samples.push(SynthSample {
            sample_id: format!("S{:05}", i + 1),
            patient_id: format!("P{patient:05}"),
            malignant: rule.apply(&concepts),
            concepts,
            background: rng.random_range(0.30..=0.40),
            noise_sigma: NOISE_SIGMA,
            noise_seed: rng.random(),
            attributes,
        });
    }

    let mut records = Vec::with_capacity(n);
    for s in &samples {
        let rel = PathBuf::from("images").join(format!("{}.png", s.sample_id));
        render(s, size).save_png(&out_dir.join(&rel))?;
        records.push(SampleRecord {
            sample_id: s.sample_id.clone(),
            patient_id: s.patient_id.clone(),
            image_path: out_dir.join(rel),
            concepts: s.concepts.clone(),
            label: if s.malignant { Label::Malignant } else { Label::Benign },
            birads: None,
            split_tag: None,
        });
    }
    let manifest = DatasetManifest {
        corpus_name: "synthetic".into(),
        bank_id: bank.bank_id().to_string(),
        records,
    };
    let sidecar = SynthSidecar {
        generator: GENERATOR_VERSION.into(),
        seed,
        image_size: size,
        grid,
        bank_id: bank.bank_id().to_string(),
        label_rule: rule,
        samples,
    };

    let manifest_path = out_dir.join("synthetic.csv");
    let bank_path = out_dir.join(format!("{}.csv", bank.bank_id()));
    let sidecar_path = out_dir.join("synthetic.sidecar.json");
    save_manifest(&manifest, &manifest_path)?;
    bank.save(&bank_path)?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sidecar_path, json).map_err(CorpusError::io(&sidecar_path))?;

    Ok(SynthCorpus {
        manifest,
        sidecar,
        manifest_path,
        bank_path,
        sidecar_path,
    })
}
