use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_schedule, AdamW, EarlyStopper, StopDecision};
use super::variant::{build_variant, TextSourceKind, VariantSpec};
use super::{TrainConfig, TrainingError};
use crate::corpus::{augment, crop_and_resize, DatasetManifest, FoldSplit, Raster, SampleRecord, MODEL_INPUT_SIZE};
use crate::encoder::{save_checkpoint, Batch, ConceptModel, EncoderConfig, LossBreakdown};
use crate::enrichment::label_caption;
use crate::guidelines::Modality;
use crate::metrics::{auroc, evaluate, ClassificationReport, PredictionRecord, PredictionSet};

/// Decoded model-input images, 8-bit grayscale, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct ImageCache {
    images: HashMap<String, Vec<u8>>,
}

impl ImageCache {
    pub fn load(manifest: &DatasetManifest) -> Result<Self, TrainingError> {
        let mut images = HashMap::with_capacity(manifest.len());
        for r in &manifest.records {
            let raw = Raster::load(&r.image_path)?;
            let img = crop_and_resize(&raw, None)?;
            images.insert(r.sample_id.clone(), img.to_u8());
        }
        Ok(Self { images })
    }

    pub fn get(&self, sample_id: &str) -> Result<Raster, TrainingError> {
        let px = self
            .images
            .get(sample_id)
            .ok_or_else(|| TrainingError::MissingImage(sample_id.to_string()))?;
        let side = MODEL_INPUT_SIZE;
        Ok(Raster::new(side, side, px.iter().map(|&v| v as f32 / 255.0).collect()))
    }
}

/// Inputs shared by every fold of a run.
pub struct TrainingData<'a> {
    pub manifest: &'a DatasetManifest,
    /// Enriched report per sample id.
    pub reports: Option<&'a BTreeMap<String, String>>,
    pub modality: Modality,
    pub images: &'a ImageCache,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val_loss: Option<f64>,
    pub val_auroc: Option<f64>,
    pub temperature: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
    pub predictions: PredictionSet,
    pub report: ClassificationReport,
    pub model: ConceptModel,
    pub val_ids: Vec<String>,
}

fn binary_label(r: &SampleRecord) -> Result<usize, TrainingError> {
    r.label
        .as_binary()
        .map(usize::from)
        .ok_or_else(|| TrainingError::NonBinaryLabel(r.sample_id.clone()))
}

/// Contrastive text of each record under `spec`, or `None` when the variant has no text
/// branch.
pub fn resolve_texts(
    spec: &VariantSpec,
    data: &TrainingData<'_>,
    indices: &[usize],
) -> Result<Option<Vec<String>>, TrainingError> {
    let records = &data.manifest.records;
    match spec.text_source() {
        TextSourceKind::None => Ok(None),
        TextSourceKind::LabelCaptions => Ok(Some(
            indices
                .iter()
                .map(|&i| label_caption(records[i].label, data.modality))
                .collect(),
        )),
        TextSourceKind::EnrichedReports => {
            let reports = data.reports.ok_or_else(|| {
                TrainingError::MissingReport(
                    indices
                        .first()
                        .map(|&i| records[i].sample_id.clone())
                        .unwrap_or_default(),
                )
            })?;
            indices
                .iter()
                .map(|&i| {
                    let id = &records[i].sample_id;
                    reports
                        .get(id)
                        .cloned()
                        .ok_or_else(|| TrainingError::MissingReport(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
        }
    }
}

/// Carves a seeded share of training patients out for validation. Train-only records stay
/// in training.
pub fn validation_split(
    manifest: &DatasetManifest,
    train: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in train {
        let r = &manifest.records[i];
        if !r.is_train_only() {
            by_patient.entry(r.patient_id.as_str()).or_default().push(i);
        }
    }
    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    let n_val = if fraction <= 0.0 || patients.len() < 2 {
        0
    } else {
        ((patients.len() as f64 * fraction).round() as usize).clamp(1, patients.len() - 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let val_patients: HashSet<&str> = patients[..n_val].iter().copied().collect();
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for &i in train {
        if val_patients.contains(manifest.records[i].patient_id.as_str()) {
            val.push(i);
        } else {
            fit.push(i);
        }
    }
    (fit, val)
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

struct Split {
    indices: Vec<usize>,
    x_v: Array2<f64>,
    x_t: Option<Array2<f64>>,
    labels: Vec<usize>,
    concepts: Array2<f64>,
}

impl Split {
    fn batch(&self, rows: &[usize], x_v: Option<Array2<f64>>) -> Batch {
        let sel = |a: &Array2<f64>| a.select(ndarray::Axis(0), rows);
        Batch {
            x_v: x_v.unwrap_or_else(|| sel(&self.x_v)),
            x_t: self.x_t.as_ref().map(sel),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            concepts: sel(&self.concepts),
        }
    }
}

fn features_for(
    model: &ConceptModel,
    data: &TrainingData<'_>,
    indices: &[usize],
    augment_with: Option<(&crate::corpus::AugmentConfig, u64)>,
) -> Result<Array2<f64>, TrainingError> {
    let records = &data.manifest.records;
    let mut out = Array2::zeros((indices.len(), model.vision().dim()));
    for (row, &i) in indices.iter().enumerate() {
        let id = &records[i].sample_id;
        let mut img = data.images.get(id)?;
        if let Some((cfg, seed)) = augment_with {
            img = augment(&img, cfg, mix_seed(&[seed, i as u64]));
        }
        let f = model.vision().features(id, &img)?;
        out.row_mut(row).assign(&ArrayView1::from(&f[..]));
    }
    Ok(out)
}

fn prepare(
    model: &ConceptModel,
    spec: &VariantSpec,
    data: &TrainingData<'_>,
    indices: Vec<usize>,
) -> Result<Split, TrainingError> {
    let records = &data.manifest.records;
    let x_v = features_for(model, data, &indices, None)?;
    let x_t = resolve_texts(spec, data, &indices)?.map(|t| model.text_features(&t));
    let labels = indices
        .iter()
        .map(|&i| binary_label(&records[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let n_c = model.config.n_concepts;
    let mut concepts = Array2::zeros((indices.len(), n_c));
    for (row, &i) in indices.iter().enumerate() {
        let c = &records[i].concepts;
        if c.len() != n_c {
            return Err(TrainingError::Encoder(crate::encoder::EncoderError::ConceptCount {
                expected: n_c,
                found: c.len(),
            }));
        }
        for (k, &on) in c.iter().enumerate() {
            concepts[[row, k]] = if on { 1.0 } else { 0.0 };
        }
    }
    Ok(Split {
        indices,
        x_v,
        x_t,
        labels,
        concepts,
    })
}

fn mean_loss(
    model: &ConceptModel,
    split: &Split,
    spec: &VariantSpec,
    config: &TrainConfig,
) -> Result<f64, TrainingError> {
    let n = split.indices.len();
    let mut total = 0.0;
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(config.batch_size) {
        let b = split.batch(chunk, None);
        let l = model.evaluate_loss(&b, &spec.loss_weights, config.clip_direction)?;
        total += l.total * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Test-split predictions of `model`.
pub fn predict_split(
    model: &ConceptModel,
    data: &TrainingData<'_>,
    indices: &[usize],
) -> Result<PredictionSet, TrainingError> {
    let x_v = features_for(model, data, indices, None)?;
    let preds = model.predict_features(&x_v)?;
    let records = indices
        .iter()
        .zip(preds)
        .map(|(&i, p)| {
            let r = &data.manifest.records[i];
            Ok(PredictionRecord {
                sample_id: r.sample_id.clone(),
                y_true: binary_label(r)? == 1,
                y_score: p.y_hat,
                c_true: r.concepts.clone(),
                c_score: p.c_hat,
            })
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;
    Ok(PredictionSet::new(records)?)
}

fn check_disjoint(manifest: &DatasetManifest, split: &FoldSplit) -> Result<(), TrainingError> {
    let test_ids: HashSet<&str> = split
        .test
        .iter()
        .map(|&i| manifest.records[i].sample_id.as_str())
        .collect();
    let test_patients: HashSet<&str> = split
        .test
        .iter()
        .map(|&i| manifest.records[i].patient_id.as_str())
        .collect();
    for &i in &split.train {
        let r = &manifest.records[i];
        if test_ids.contains(r.sample_id.as_str()) || test_patients.contains(r.patient_id.as_str()) {
            return Err(TrainingError::Leakage(r.sample_id.clone()));
        }
    }
    Ok(())
}

/// Trains one fold, keeps the parameters with the lowest validation loss, and evaluates
/// them on the fold's test records. With `out_dir`, writes `metrics.jsonl`,
/// `checkpoint.bin`, `predictions.csv` and `report.json` there.
pub fn fit_fold(
    spec: &VariantSpec,
    enc_config: &EncoderConfig,
    data: &TrainingData<'_>,
    split: &FoldSplit,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FoldOutcome, TrainingError> {
    config.validate()?;
    check_disjoint(data.manifest, split)?;
    let fold_seed = mix_seed(&[config.seed, split.fold as u64]);
    let mut model = build_variant(spec, enc_config, fold_seed)?;
    let (fit_idx, val_idx) =
        validation_split(data.manifest, &split.train, config.val_fraction, fold_seed ^ 1);
    if fit_idx.is_empty() {
        return Err(TrainingError::EmptySplit(format!("fold {} has no training records", split.fold)));
    }
    let test_ids: HashSet<String> = split
        .test
        .iter()
        .map(|&i| data.manifest.records[i].sample_id.clone())
        .collect();

    let train = prepare(&model, spec, data, fit_idx)?;
    let val = if val_idx.is_empty() {
        None
    } else {
        Some(prepare(&model, spec, data, val_idx)?)
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(TrainingError::io(dir))?;
    }
    let metrics_path = out_dir.map(|d| d.join("metrics.jsonl"));
    if let Some(p) = &metrics_path {
        if p.exists() {
            fs::remove_file(p).map_err(TrainingError::io(p))?;
        }
    }

    let n = train.indices.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = steps_per_epoch * config.warmup_epochs;
    let mut opt = AdamW::new(&model.params, config.adamw);
    let mut stopper = EarlyStopper::new(config.early_stop.patience);
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed ^ 2);
    let mut step = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let epoch_x = if config.augment.is_identity() || !model.vision().reads_pixels() {
            None
        } else {
            let seed = mix_seed(&[fold_seed, epoch as u64]);
            Some(features_for(&model, data, &train.indices, Some((&config.augment, seed)))?)
        };
        let mut sums = LossBreakdown::default();
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            for &r in chunk {
                let id = &data.manifest.records[train.indices[r]].sample_id;
                if test_ids.contains(id) {
                    return Err(TrainingError::Leakage(id.clone()));
                }
            }
            let x_v = epoch_x
                .as_ref()
                .map(|x| x.select(ndarray::Axis(0), chunk));
            let batch = train.batch(chunk, x_v);
            step += 1;
            lr = lr_schedule(step, total_steps, warmup_steps, config.lr);
            let (parts, grads) =
                model.loss_and_grad(&batch, &spec.loss_weights, config.clip_direction)?;
            if !parts.total.is_finite() {
                return Err(TrainingError::Diverged { fold: split.fold, epoch });
            }
            opt.step(&mut model.params, &grads, lr);
            model.clamp_temperature();
            let w = chunk.len() as f64 / n as f64;
            sums.clip += parts.clip * w;
            sums.diag += parts.diag * w;
            sums.concept += parts.concept * w;
            sums.total += parts.total * w;
        }

        let (val_loss, val_auroc) = match &val {
            Some(v) => {
                let loss = mean_loss(&model, v, spec, config)?;
                let preds = model.predict_features(&v.x_v)?;
                let scores: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
                let labels: Vec<bool> = v.labels.iter().map(|&y| y == 1).collect();
                (Some(loss), auroc(&scores, &labels).ok())
            }
            None => (None, None),
        };
        let decision = match val_loss {
            Some(l) => stopper.observe(epoch, l),
            None => StopDecision::Improved,
        };
        let improved = decision == StopDecision::Improved;
        if improved {
            best_params = model.params.clone();
            best_epoch = epoch;
        }
        let record = EpochRecord {
            fold: split.fold,
            epoch,
            lr,
            train: sums,
            val_loss,
            val_auroc,
            temperature: model.params.temperature(),
            improved,
        };
        log::info!(
            "fold {} epoch {epoch}: train {:.4} val {} auroc {}",
            split.fold,
            sums.total,
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_auroc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        if let Some(p) = &metrics_path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(TrainingError::io(p))?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))
                .map_err(TrainingError::io(p))?;
        }
        history.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    let predictions = predict_split(&model, data, &split.test)?;
    let report = evaluate(&predictions, config.threshold)?;
    let val_ids: Vec<String> = val
        .as_ref()
        .map(|v| {
            v.indices
                .iter()
                .map(|&i| data.manifest.records[i].sample_id.clone())
                .collect()
        })
        .unwrap_or_default();

    if let Some(dir) = out_dir {
        let meta = serde_json::json!({
            "variant": spec,
            "fold": split.fold,
            "best_epoch": best_epoch,
            "epochs_run": history.len(),
            "train_config": config,
            "val_ids": val_ids,
        });
        save_checkpoint(&model, &meta, &dir.join("checkpoint.bin"))?;
        predictions.save_csv(&dir.join("predictions.csv"))?;
        let report_path = dir.join("report.json");
        fs::write(
            &report_path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(TrainingError::io(&report_path))?;
    }

    Ok(FoldOutcome {
        fold: split.fold,
        epochs_run: history.len(),
        best_epoch,
        stopped_early,
        history,
        predictions,
        report,
        model,
        val_ids,
    })
}

/// Sample ids of the records a fold trains on, for leakage audits.
pub fn training_ids(manifest: &DatasetManifest, split: &FoldSplit) -> BTreeSet<String> {
    split
        .train
        .iter()
        .map(|&i| manifest.records[i].sample_id.clone())
        .collect()
}
