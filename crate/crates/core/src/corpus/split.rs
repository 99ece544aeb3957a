use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetManifest};

/// Patient-level k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

/// Record indices of one cross-validation round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns every patient to one of `k` folds.
///
/// Patients are shuffled with a seeded generator and dealt round-robin, so fold sizes
/// (in patients) differ by at most one. Records tagged
/// [`TRAIN_ONLY_TAG`](super::TRAIN_ONLY_TAG) do not take part.
pub fn make_patient_folds(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidFoldCount(k));
    }
    let mut patients: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| !r.is_train_only())
        .map(|r| r.patient_id.as_str())
        .collect();
    patients.sort_unstable();
    patients.dedup();
    if patients.len() < k {
        return Err(CorpusError::NotEnoughPatients {
            patients: patients.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let assignment = patients
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p.to_string(), i % k))
        .collect();
    Ok(SplitPlan { k, seed, assignment })
}

impl SplitPlan {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    /// Patients per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Train/test record indices for `fold`. Training-only records always land in `train`.
    pub fn split(&self, manifest: &DatasetManifest, fold: usize) -> Result<FoldSplit, CorpusError> {
        if fold >= self.k {
            return Err(CorpusError::FoldOutOfRange { fold, k: self.k });
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, r) in manifest.records.iter().enumerate() {
            if r.is_train_only() {
                train.push(i);
                continue;
            }
            match self.fold_of(&r.patient_id) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => return Err(CorpusError::UnassignedPatient(r.patient_id.clone())),
            }
        }
        Ok(FoldSplit { fold, train, test })
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(self).expect("plan serializes");
        std::fs::write(path, json).map_err(CorpusError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(CorpusError::io(path))?;
        serde_json::from_str(&text).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, SampleRecord, TRAIN_ONLY_TAG};

    fn manifest(images_per_patient: &[usize]) -> DatasetManifest {
        let mut records = Vec::new();
        for (p, &n) in images_per_patient.iter().enumerate() {
            for j in 0..n {
                records.push(SampleRecord {
                    sample_id: format!("s{p}_{j}"),
                    patient_id: format!("p{p}"),
                    image_path: "x.png".into(),
                    concepts: vec![false; 4],
                    label: Label::Benign,
                    birads: None,
                    split_tag: None,
                });
            }
        }
        DatasetManifest {
            corpus_name: "t".into(),
            bank_id: "b".into(),
            records,
        }
    }

    #[test]
    fn ten_patients_five_folds() {
        let plan = make_patient_folds(&manifest(&[1; 10]), 5, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn patient_images_stay_together() {
        let m = manifest(&[4, 1, 1, 2, 1, 1]);
        let plan = make_patient_folds(&m, 3, 9).unwrap();
        let f = plan.fold_of("p0").unwrap();
        let split = plan.split(&m, f).unwrap();
        let p0: Vec<_> = (0..4).collect();
        assert!(p0.iter().all(|i| split.test.contains(i)));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            make_patient_folds(&manifest(&[1; 3]), 1, 0),
            Err(CorpusError::InvalidFoldCount(1))
        ));
        assert!(matches!(
            make_patient_folds(&manifest(&[1; 3]), 4, 0),
            Err(CorpusError::NotEnoughPatients { patients: 3, k: 4 })
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = manifest(&[1; 40]);
        let a = make_patient_folds(&m, 5, 1).unwrap();
        assert_eq!(a, make_patient_folds(&m, 5, 1).unwrap());
        assert_ne!(a, make_patient_folds(&m, 5, 2).unwrap());
    }

    #[test]
    fn train_only_records_never_tested() {
        let mut m = manifest(&[1; 6]);
        m.records[0].split_tag = Some(TRAIN_ONLY_TAG.into());
        let plan = make_patient_folds(&m, 5, 0).unwrap();
        assert!(plan.fold_of("p0").is_none());
        for fold in 0..5 {
            let s = plan.split(&m, fold).unwrap();
            assert!(s.train.contains(&0));
            assert!(!s.test.contains(&0));
        }
    }
}
