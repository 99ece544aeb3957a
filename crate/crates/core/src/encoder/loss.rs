//! Training objectives and their gradients.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::nn::{log_softmax_rows, softmax_rows};
use super::EncoderError;

/// Task weights of `λ·L_clip + μ·L_y + ν·L_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
}

impl LossWeights {
    pub fn new(lambda: f64, mu: f64, nu: f64) -> Result<Self, EncoderError> {
        let w = Self { lambda, mu, nu };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(EncoderError::InvalidWeight { name, value: v });
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 1.0,
            nu: 1.0,
        }
    }
}

/// Contrastive loss value with gradients for both embedding batches and the temperature.
#[derive(Debug, Clone)]
pub struct ClipLoss {
    pub value: f64,
    pub grad_v: Array2<f64>,
    pub grad_t: Array2<f64>,
    pub grad_tau: f64,
}

/// Which cross-entropy terms of the similarity matrix enter the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipDirection {
    Symmetric,
    ImageToText,
}

fn check_pair(h_v: &Array2<f64>, h_t: &Array2<f64>, tau: f64) -> Result<(), EncoderError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(EncoderError::InvalidTemperature(tau));
    }
    if h_v.dim() != h_t.dim() {
        return Err(EncoderError::ShapeMismatch(format!(
            "image batch {:?} vs text batch {:?}",
            h_v.dim(),
            h_t.dim()
        )));
    }
    Ok(())
}

/// Symmetric InfoNCE over the batch cosine-similarity matrix scaled by `1/tau`.
pub fn clip_loss(h_v: &Array2<f64>, h_t: &Array2<f64>, tau: f64) -> Result<ClipLoss, EncoderError> {
    clip_loss_directed(h_v, h_t, tau, ClipDirection::Symmetric)
}

pub fn clip_loss_directed(
    h_v: &Array2<f64>,
    h_t: &Array2<f64>,
    tau: f64,
    direction: ClipDirection,
) -> Result<ClipLoss, EncoderError> {
    check_pair(h_v, h_t, tau)?;
    let b = h_v.nrows();
    if b <= 1 {
        return Ok(ClipLoss {
            value: 0.0,
            grad_v: Array2::zeros(h_v.raw_dim()),
            grad_t: Array2::zeros(h_t.raw_dim()),
            grad_tau: 0.0,
        });
    }
    let s = h_v.dot(&h_t.t()) / tau;
    let bf = b as f64;

    let ls_rows = log_softmax_rows(&s);
    let i2t = -(0..b).map(|i| ls_rows[[i, i]]).sum::<f64>() / bf;
    let mut ds = softmax_rows(&s);
    for i in 0..b {
        ds[[i, i]] -= 1.0;
    }

    let (value, ds) = match direction {
        ClipDirection::ImageToText => (i2t, ds / bf),
        ClipDirection::Symmetric => {
            let st = s.t().to_owned();
            let ls_cols = log_softmax_rows(&st);
            let t2i = -(0..b).map(|i| ls_cols[[i, i]]).sum::<f64>() / bf;
            let mut dst = softmax_rows(&st);
            for i in 0..b {
                dst[[i, i]] -= 1.0;
            }
            ((i2t + t2i) / 2.0, (ds + &dst.t()) / (2.0 * bf))
        }
    };

    let grad_v = ds.dot(h_t) / tau;
    let grad_t = ds.t().dot(h_v) / tau;
    let grad_tau = -(&ds * &s).sum() / tau;
    Ok(ClipLoss {
        value,
        grad_v,
        grad_t,
        grad_tau,
    })
}

fn check_binary(values: impl IntoIterator<Item = f64>) -> Result<(), EncoderError> {
    for v in values {
        if v != 0.0 && v != 1.0 {
            return Err(EncoderError::ShapeMismatch(format!("target {v} is not 0 or 1")));
        }
    }
    Ok(())
}

/// Mean cross-entropy of `(B, K)` logits against class indices, with its logit gradient.
pub fn diag_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>), EncoderError> {
    let b = logits.nrows();
    if labels.len() != b {
        return Err(EncoderError::ShapeMismatch(format!(
            "{} labels for {b} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(EncoderError::ShapeMismatch(format!("label {bad} out of range")));
    }
    if b == 0 {
        return Ok((0.0, logits.clone()));
    }
    let ls = log_softmax_rows(logits);
    let bf = b as f64;
    let value = -labels.iter().enumerate().map(|(i, &y)| ls[[i, y]]).sum::<f64>() / bf;
    let mut grad = ls.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= 1.0;
    }
    grad /= bf;
    Ok((value, grad))
}

/// Mean over concepts of the per-concept binary cross-entropy on `(B, N_c, 2)` logits.
pub fn concept_loss(
    logits: &Array3<f64>,
    concepts: &Array2<f64>,
) -> Result<(f64, Array3<f64>), EncoderError> {
    let (b, n_c, k) = logits.dim();
    if k != 2 {
        return Err(EncoderError::ShapeMismatch(format!(
            "concept logits need 2 classes, got {k}"
        )));
    }
    if concepts.dim() != (b, n_c) {
        return Err(EncoderError::ConceptCount {
            expected: n_c,
            found: concepts.ncols(),
        });
    }
    check_binary(concepts.iter().copied())?;
    let mut grad = Array3::zeros((b, n_c, 2));
    if b == 0 || n_c == 0 {
        return Ok((0.0, grad));
    }
    let denom = (b * n_c) as f64;
    let mut total = 0.0;
    for i in 0..b {
        for c in 0..n_c {
            let l0 = logits[[i, c, 0]];
            let l1 = logits[[i, c, 1]];
            let m = l0.max(l1);
            let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            let y = concepts[[i, c]] as usize;
            total -= [l0, l1][y] - lse;
            let p1 = (l1 - lse).exp();
            let p0 = (l0 - lse).exp();
            grad[[i, c, 0]] = (p0 - if y == 0 { 1.0 } else { 0.0 }) / denom;
            grad[[i, c, 1]] = (p1 - if y == 1 { 1.0 } else { 0.0 }) / denom;
        }
    }
    Ok((total / denom, grad))
}

pub fn total_loss(l_clip: f64, l_y: f64, l_c: f64, weights: &LossWeights) -> f64 {
    weights.lambda * l_clip + weights.mu * l_y + weights.nu * l_c
}
