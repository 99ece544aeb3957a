//! Dense layers, activations and row normalization with hand-written backward passes.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;
const NORM_EPS: f64 = 1e-12;

/// `y = x W + b` with `W` of shape (in, out) and `b` of shape (1, out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn gelu_forward(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(gelu)
}

/// `dy ⊙ gelu'(a)`.
pub fn gelu_backward(a: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = a.mapv(gelu_grad);
    out *= dy;
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scales each row to unit L2 norm.
pub fn l2_normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt().max(NORM_EPS);
        row /= n;
    }
    out
}

/// Backward of [`l2_normalize_rows`]: `(dy - y (y·dy)) / ‖x‖` per row.
pub fn l2_normalize_backward(x: &Array2<f64>, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let xr = x.row(i);
        let yr = y.row(i);
        let dyr = dy.row(i);
        let n = xr.dot(&xr).sqrt().max(NORM_EPS);
        let proj = yr.dot(&dyr);
        let mut out = dx.row_mut(i);
        out.assign(&((&dyr - &(&yr * proj)) / n));
    }
    dx
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}
