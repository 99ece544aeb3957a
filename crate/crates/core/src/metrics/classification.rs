use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Model outputs and targets for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub y_true: bool,
    pub y_score: f64,
    pub c_true: Vec<bool>,
    pub c_score: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self, MetricsError> {
        let set = Self { records };
        set.validate()?;
        Ok(set)
    }

    pub fn n_concepts(&self) -> usize {
        self.records.first().map_or(0, |r| r.c_true.len())
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let n_c = self.n_concepts();
        for r in &self.records {
            if r.c_true.len() != n_c || r.c_score.len() != n_c {
                return Err(MetricsError::Length(format!(
                    "sample `{}` has {} concept targets and {} scores, expected {n_c}",
                    r.sample_id,
                    r.c_true.len(),
                    r.c_score.len()
                )));
            }
            let in_range = |v: f64| (0.0..=1.0).contains(&v);
            if !in_range(r.y_score) || !r.c_score.iter().all(|&v| in_range(v)) {
                return Err(MetricsError::Length(format!(
                    "sample `{}` has a score outside [0, 1]",
                    r.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn y_true(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.y_true).collect()
    }

    pub fn y_score(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_score).collect()
    }

    /// CSV with columns `sample_id,y_true,y_score,c_true,c_score`; concept targets as a bit
    /// string and concept scores separated by `;`.
    pub fn save_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| MetricsError::csv(path, e))?;
        w.write_record(["sample_id", "y_true", "y_score", "c_true", "c_score"])
            .map_err(|e| MetricsError::csv(path, e))?;
        for r in &self.records {
            let c_true: String = r.c_true.iter().map(|&c| if c { '1' } else { '0' }).collect();
            let c_score = r
                .c_score
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.sample_id.as_str(),
                if r.y_true { "1" } else { "0" },
                &r.y_score.to_string(),
                &c_true,
                &c_score,
            ])
            .map_err(|e| MetricsError::csv(path, e))?;
        }
        w.flush().map_err(MetricsError::io(path))
    }

    pub fn load_csv(path: &Path) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| MetricsError::csv(path, e))?;
        let mut records = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| MetricsError::csv(path, e))?;
            let field = |idx: usize, name: &'static str| {
                row.get(idx).ok_or_else(|| MetricsError::Schema {
                    row: row_no,
                    field: name,
                    message: "missing".into(),
                })
            };
            let bad = |name: &'static str, message: String| MetricsError::Schema {
                row: row_no,
                field: name,
                message,
            };
            let y_true = match field(1, "y_true")? {
                "1" => true,
                "0" => false,
                other => return Err(bad("y_true", format!("`{other}` is not 0 or 1"))),
            };
            let y_score = field(2, "y_score")?
                .parse::<f64>()
                .map_err(|e| bad("y_score", e.to_string()))?;
            let c_true = field(3, "c_true")?
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(bad("c_true", format!("`{other}` is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let raw_scores = field(4, "c_score")?;
            let c_score = if raw_scores.is_empty() {
                Vec::new()
            } else {
                raw_scores
                    .split(';')
                    .map(|v| v.parse::<f64>().map_err(|e| bad("c_score", e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?
            };
            records.push(PredictionRecord {
                sample_id: field(0, "sample_id")?.to_string(),
                y_true,
                y_score,
                c_true,
                c_score,
            });
        }
        Self::new(records)
    }
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs where the positive scores
/// higher, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Length("scores contain NaN".into()));
    }
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(MetricsError::UndefinedMetric(format!(
            "AUROC needs both classes ({p} positive, {n} negative)"
        )));
    }
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    neg.sort_by(|a, b| a.total_cmp(b));
    // twice the number of correctly ordered pairs, so ties stay integral
    let mut half_units: u64 = 0;
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        let below = neg.partition_point(|&v| v < s);
        let not_above = neg.partition_point(|&v| v <= s);
        half_units += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(half_units as f64 / 2.0 / (p as f64 * n as f64))
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(preds: &[bool], labels: &[bool]) -> Result<f64, MetricsError> {
    let c = confusion_stats(preds, labels)?;
    Ok((c.sensitivity + c.specificity) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when precision + recall is zero and `f1` was reported as 0.
    pub f1_undefined: bool,
}

pub fn confusion_stats(preds: &[bool], labels: &[bool]) -> Result<ConfusionStats, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Length(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(MetricsError::UndefinedMetric(format!(
            "confusion statistics need both classes ({p} positive, {n} negative)"
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&y_hat, &y) in preds.iter().zip(labels) {
        match (y_hat, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let sensitivity = tp as f64 / p as f64;
    let specificity = tn as f64 / n as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let f1_undefined = precision + sensitivity == 0.0;
    let f1 = if f1_undefined {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(ConfusionStats {
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        precision,
        f1,
        f1_undefined,
    })
}

pub fn threshold(scores: &[f64], t: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= t).collect()
}

/// AUROC of each concept; `None` when a concept has a single class in the set.
pub fn per_concept_auroc(set: &PredictionSet) -> Vec<Option<f64>> {
    (0..set.n_concepts())
        .map(|c| {
            let scores: Vec<f64> = set.records.iter().map(|r| r.c_score[c]).collect();
            let labels: Vec<bool> = set.records.iter().map(|r| r.c_true[c]).collect();
            auroc(&scores, &labels).ok()
        })
        .collect()
}

pub fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Headline metrics of one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub threshold: f64,
    pub auroc: f64,
    pub balanced_accuracy: f64,
    pub confusion: ConfusionStats,
    pub concept_auroc: Vec<Option<f64>>,
    pub mean_concept_auroc: Option<f64>,
}

pub fn evaluate(set: &PredictionSet, t: f64) -> Result<ClassificationReport, MetricsError> {
    set.validate()?;
    let labels = set.y_true();
    let scores = set.y_score();
    let preds = threshold(&scores, t);
    let concept_auroc = per_concept_auroc(set);
    Ok(ClassificationReport {
        n: set.records.len(),
        threshold: t,
        auroc: auroc(&scores, &labels)?,
        balanced_accuracy: balanced_accuracy(&preds, &labels)?,
        confusion: confusion_stats(&preds, &labels)?,
        mean_concept_auroc: mean_present(&concept_auroc),
        concept_auroc,
    })
}
