use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;

const LEVEL_TOL: f64 = 1e-9;

/// Multi-concept integration score levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CigsLevel {
    Incorrect,
    PartiallyCorrect,
    MostlyCorrect,
    Correct,
}

impl CigsLevel {
    pub const ALL: [CigsLevel; 4] = [
        CigsLevel::Incorrect,
        CigsLevel::PartiallyCorrect,
        CigsLevel::MostlyCorrect,
        CigsLevel::Correct,
    ];

    pub fn value(self) -> f64 {
        match self {
            CigsLevel::Incorrect => 0.0,
            CigsLevel::PartiallyCorrect => 0.25,
            CigsLevel::MostlyCorrect => 0.75,
            CigsLevel::Correct => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|l| (l.value() - v).abs() < LEVEL_TOL)
    }
}

/// BI-RADS agreement score levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasLevel {
    Incorrect,
    CorrectImplication,
    ExactCategory,
}

impl BasLevel {
    pub const ALL: [BasLevel; 3] = [
        BasLevel::Incorrect,
        BasLevel::CorrectImplication,
        BasLevel::ExactCategory,
    ];

    pub fn value(self) -> f64 {
        match self {
            BasLevel::Incorrect => 0.0,
            BasLevel::CorrectImplication => 0.8,
            BasLevel::ExactCategory => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|l| (l.value() - v).abs() < LEVEL_TOL)
    }
}

impl fmt::Display for CigsLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl fmt::Display for BasLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricScore {
    pub case_id: String,
    pub reviewer_id: String,
    /// Correctly interpreted concepts over interpreted concepts.
    pub cints: f64,
    pub cigs: CigsLevel,
    pub bas: BasLevel,
}

/// Parses `correct/predicted` or a decimal in `[0, 1]`.
pub fn parse_cints(raw: &str) -> Result<f64, String> {
    let raw = raw.trim();
    let value = if let Some((num, den)) = raw.split_once('/') {
        let num: u32 = num.trim().parse().map_err(|_| format!("`{raw}` is not a ratio"))?;
        let den: u32 = den.trim().parse().map_err(|_| format!("`{raw}` is not a ratio"))?;
        if den == 0 {
            return Err("ratio denominator must be positive".into());
        }
        num as f64 / den as f64
    } else {
        raw.parse::<f64>().map_err(|_| format!("`{raw}` is not a number"))?
    };
    if !(0.0..=1.0).contains(&value) {
        return Err(format!("{value} is outside [0, 1]"));
    }
    Ok(value)
}

/// Reads a score file with columns `case_id,reviewer_id,cints,cigs,bas`. Extra columns are
/// ignored. Rows are numbered from 1 after the header.
pub fn import_rubric_scores(path: &Path) -> Result<Vec<RubricScore>, MetricsError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| MetricsError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| MetricsError::csv(path, e))?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| MetricsError::Schema {
                row: 0,
                field: name,
                message: "column missing from header".into(),
            })
    };
    let (c_case, c_rev, c_cints, c_cigs, c_bas) =
        (col("case_id")?, col("reviewer_id")?, col("cints")?, col("cigs")?, col("bas")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| MetricsError::csv(path, e))?;
        let err = |field: &'static str, message: String| MetricsError::Schema { row, field, message };
        let get = |idx: usize, field: &'static str| {
            rec.get(idx)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| err(field, "value missing".into()))
        };
        let case_id = get(c_case, "case_id")?.to_string();
        let reviewer_id = get(c_rev, "reviewer_id")?.to_string();
        let cints = parse_cints(get(c_cints, "cints")?).map_err(|m| err("cints", m))?;
        let cigs_raw = get(c_cigs, "cigs")?;
        let cigs = cigs_raw
            .parse::<f64>()
            .ok()
            .and_then(CigsLevel::from_value)
            .ok_or_else(|| err("cigs", format!("`{cigs_raw}` is not one of 0, 0.25, 0.75, 1")))?;
        let bas_raw = get(c_bas, "bas")?;
        let bas = bas_raw
            .parse::<f64>()
            .ok()
            .and_then(BasLevel::from_value)
            .ok_or_else(|| err("bas", format!("`{bas_raw}` is not one of 0, 0.8, 1")))?;
        out.push(RubricScore {
            case_id,
            reviewer_id,
            cints,
            cigs,
            bas,
        });
    }
    Ok(out)
}

/// Mean scores as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricAggregate {
    pub n: usize,
    pub mean_cints: f64,
    pub mean_cigs: f64,
    pub mean_bas: f64,
}

pub fn aggregate_rubric(scores: &[RubricScore]) -> Result<RubricAggregate, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::UndefinedMetric("no rubric scores to aggregate".into()));
    }
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&RubricScore) -> f64| 100.0 * scores.iter().map(f).sum::<f64>() / n;
    Ok(RubricAggregate {
        n: scores.len(),
        mean_cints: mean(&|s| s.cints),
        mean_cigs: mean(&|s| s.cigs.value()),
        mean_bas: mean(&|s| s.bas.value()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("scores.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn worked_example() {
        let s = RubricScore {
            case_id: "case-01".into(),
            reviewer_id: "r1".into(),
            cints: parse_cints("6/7").unwrap(),
            cigs: CigsLevel::MostlyCorrect,
            bas: BasLevel::CorrectImplication,
        };
        let a = aggregate_rubric(&[s]).unwrap();
        assert_eq!(format!("{:.1}", a.mean_cints), "85.7");
        assert_eq!(a.mean_cigs, 75.0);
        assert_eq!(a.mean_bas, 80.0);
        assert!(aggregate_rubric(&[]).is_err());
    }

    #[test]
    fn off_level_values_name_row_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "case_id,reviewer_id,cints,cigs,bas\ncase-01,r1,1,1,1\ncase-02,r1,0.5,0.5,1\n",
        );
        let msg = import_rubric_scores(&p).unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("cigs"), "{msg}");

        let p = write(dir.path(), "case_id,reviewer_id,cints,cigs,bas\ncase-01,r1,1,1,0.5\n");
        let msg = import_rubric_scores(&p).unwrap_err().to_string();
        assert!(msg.contains("row 1") && msg.contains("bas"), "{msg}");

        let p = write(dir.path(), "case_id,reviewer_id,cints,cigs,bas\ncase-01,r1,1.2,1,1\n");
        let msg = import_rubric_scores(&p).unwrap_err().to_string();
        assert!(msg.contains("cints"), "{msg}");
    }

    #[test]
    fn cints_forms() {
        assert_eq!(parse_cints("3/4").unwrap(), 0.75);
        assert_eq!(parse_cints("0.5").unwrap(), 0.5);
        assert!(parse_cints("1/0").is_err());
        assert!(parse_cints("8/7").is_err());
    }

    #[test]
    fn valid_file_of_twenty_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("case_id,reviewer_id,cints,cigs,bas,notes\n");
        for i in 0..20 {
            body.push_str(&format!("case-{i:02},r1,{}/7,0.75,0.8,\n", i % 8));
        }
        let p = write(dir.path(), &body);
        assert_eq!(import_rubric_scores(&p).unwrap().len(), 20);
    }
}
