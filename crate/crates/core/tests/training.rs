use std::collections::BTreeMap;

use medcbr::corpus::{make_patient_folds, synth_generate, ConceptBank, FoldSplit, SynthCorpus};
use medcbr::encoder::{load_checkpoint, EncoderConfig};
use medcbr::guidelines::Modality;
use medcbr::training::{
    fit_fold, predict_split, validation_split, FoldOutcome, ImageCache, TrainConfig,
    TrainingData, TrainingError, VariantSpec,
};

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: SynthCorpus,
    images: ImageCache,
}

fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_generate(n, &ConceptBank::synthetic(6), seed, &dir.path().join("data")).unwrap();
    let images = ImageCache::load(&corpus.manifest).unwrap();
    Fixture { _dir: dir, corpus, images }
}

fn reports(f: &Fixture) -> BTreeMap<String, String> {
    f.corpus
        .manifest
        .records
        .iter()
        .map(|r| (r.sample_id.clone(), format!("report for {}", r.sample_id)))
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_epochs: 1,
        ..TrainConfig::desk()
    }
}

fn split0(f: &Fixture) -> FoldSplit {
    make_patient_folds(&f.corpus.manifest, 5, 0)
        .unwrap()
        .split(&f.corpus.manifest, 0)
        .unwrap()
}

fn fit(f: &Fixture, spec: &VariantSpec, reports: Option<&BTreeMap<String, String>>, config: &TrainConfig, out: Option<&std::path::Path>) -> Result<FoldOutcome, TrainingError> {
    let data = TrainingData {
        manifest: &f.corpus.manifest,
        reports,
        modality: Modality::Ultrasound,
        images: &f.images,
    };
    fit_fold(spec, &EncoderConfig::tiny(6), &data, &split0(f), config, out)
}

#[test]
fn missing_report_names_the_sample() {
    let f = fixture(60, 1);
    let mut r = reports(&f);
    let victim = f.corpus.manifest.records[split0(&f).train[0]].sample_id.clone();
    r.remove(&victim);
    match fit(&f, &VariantSpec::medcbr(), Some(&r), &quick(2), None) {
        Err(TrainingError::MissingReport(id)) => assert_eq!(id, victim),
        other => panic!("expected MissingReport, got {:?}", other.map(|o| o.fold)),
    }
}

#[test]
fn overlapping_split_is_leakage() {
    let f = fixture(60, 2);
    let mut split = split0(&f);
    split.train.push(split.test[0]);
    let data = TrainingData {
        manifest: &f.corpus.manifest,
        reports: None,
        modality: Modality::Ultrasound,
        images: &f.images,
    };
    let err = fit_fold(&VariantSpec::clip_cbl(), &EncoderConfig::tiny(6), &data, &split, &quick(2), None)
        .err()
        .unwrap();
    assert!(matches!(err, TrainingError::Leakage(_)), "{err}");
}

#[test]
fn validation_patients_are_disjoint_from_fit_patients() {
    let f = fixture(200, 3);
    let split = split0(&f);
    let (fit_idx, val_idx) = validation_split(&f.corpus.manifest, &split.train, 0.15, 9);
    assert_eq!(fit_idx.len() + val_idx.len(), split.train.len());
    assert!(!val_idx.is_empty());
    let patient = |i: &usize| f.corpus.manifest.records[*i].patient_id.clone();
    let val: std::collections::BTreeSet<_> = val_idx.iter().map(patient).collect();
    assert!(fit_idx.iter().all(|i| !val.contains(&patient(i))));
}

#[test]
fn same_seed_gives_identical_predictions() {
    let f = fixture(100, 4);
    let r = reports(&f);
    let a = fit(&f, &VariantSpec::medcbr(), Some(&r), &quick(3), None).unwrap();
    let b = fit(&f, &VariantSpec::medcbr(), Some(&r), &quick(3), None).unwrap();
    assert_eq!(a.predictions, b.predictions);
    let mut other = quick(3);
    other.seed = 99;
    let c = fit(&f, &VariantSpec::medcbr(), Some(&r), &other, None).unwrap();
    assert_ne!(a.predictions, c.predictions);
}

#[test]
fn checkpoint_reload_reproduces_predictions() {
    let f = fixture(100, 5);
    let r = reports(&f);
    let out = tempfile::tempdir().unwrap();
    let outcome = fit(&f, &VariantSpec::medcbr(), Some(&r), &quick(3), Some(out.path())).unwrap();
    for file in ["metrics.jsonl", "checkpoint.bin", "predictions.csv", "report.json"] {
        assert!(out.path().join(file).exists(), "{file}");
    }
    let (model, meta) = load_checkpoint(&out.path().join("checkpoint.bin")).unwrap();
    assert_eq!(meta["best_epoch"].as_u64().unwrap() as usize, outcome.best_epoch);
    let data = TrainingData {
        manifest: &f.corpus.manifest,
        reports: Some(&r),
        modality: Modality::Ultrasound,
        images: &f.images,
    };
    let again = predict_split(&model, &data, &split0(&f).test).unwrap();
    assert_eq!(again, outcome.predictions);
    let lines = std::fs::read_to_string(out.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), outcome.epochs_run);
}

#[test]
fn training_loss_trends_down_early() {
    let f = fixture(200, 6);
    let r = reports(&f);
    let outcome = fit(&f, &VariantSpec::medcbr(), Some(&r), &quick(6), None).unwrap();
    let totals: Vec<f64> = outcome.history.iter().take(5).map(|e| e.train.total).collect();
    let avg: Vec<f64> = totals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    assert!(avg.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
}

#[test]
fn every_ablation_rung_trains() {
    let f = fixture(80, 7);
    let r = reports(&f);
    for spec in medcbr::training::ablation_ladder() {
        let outcome = fit(&f, &spec, Some(&r), &quick(2), None).unwrap();
        assert_eq!(outcome.predictions.records.len(), split0(&f).test.len(), "{}", spec.slug());
    }
}
