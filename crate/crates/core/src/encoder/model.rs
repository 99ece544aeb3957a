use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{HashTokenizer, VisionBackbone};
use super::loss::{clip_loss_directed, concept_loss, diag_loss, total_loss, ClipDirection, LossWeights};
use super::nn::{
    gelu_backward, gelu_forward, l2_normalize_backward, l2_normalize_rows, sigmoid, Linear,
};
use super::EncoderError;
use crate::corpus::{ConceptBank, Raster};

/// Upper bound on `1/τ`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// What the diagnostic head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// The image embedding `h_v`.
    #[default]
    Embedding,
    /// Predicted concept probabilities; diagnostic gradients reach the adapters.
    ConceptProbabilities,
    /// Predicted concept probabilities treated as constants by the diagnostic loss.
    DetachedConceptProbabilities,
}

impl HeadInput {
    pub fn reads_concepts(self) -> bool {
        !matches!(self, HeadInput::Embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub vision_backbone_id: String,
    pub text_backbone_id: String,
    pub n_concepts: usize,
    pub temperature_init: f64,
    pub temperature_learnable: bool,
    #[serde(default = "default_vision_hidden")]
    pub vision_hidden: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub head_input: HeadInput,
    #[serde(default = "default_true")]
    pub text_branch: bool,
}

fn default_vision_hidden() -> usize {
    128
}

fn default_max_tokens() -> usize {
    77
}

fn default_true() -> bool {
    true
}

impl EncoderConfig {
    pub fn tiny(n_concepts: usize) -> Self {
        Self {
            embed_dim: 32,
            vision_backbone_id: super::backbone::TINY_VISION_ID.into(),
            text_backbone_id: super::backbone::TINY_TEXT_ID.into(),
            n_concepts,
            temperature_init: 0.07,
            temperature_learnable: true,
            vision_hidden: default_vision_hidden(),
            max_tokens: default_max_tokens(),
            head_input: HeadInput::Embedding,
            text_branch: true,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.n_concepts == 0 {
            return bad("n_concepts must be positive".into());
        }
        if self.vision_hidden == 0 {
            return bad("vision_hidden must be positive".into());
        }
        if !(self.temperature_init > 0.0) || !self.temperature_init.is_finite() {
            return Err(EncoderError::InvalidTemperature(self.temperature_init));
        }
        Ok(())
    }

    pub fn check_bank(&self, bank: &ConceptBank) -> Result<(), EncoderError> {
        if bank.len() != self.n_concepts {
            return Err(EncoderError::ConceptCount {
                expected: self.n_concepts,
                found: bank.len(),
            });
        }
        Ok(())
    }

    pub fn adapter_hidden(&self) -> usize {
        (self.embed_dim / 4).max(1)
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub vision_hidden: Linear,
    pub vision_out: Linear,
    pub text_proj: Linear,
    /// `ln(1/τ)` as a 1×1 tensor.
    pub logit_scale: Array2<f64>,
    pub diag: Linear,
    pub adapter_hidden: Vec<Linear>,
    pub adapter_out: Vec<Linear>,
}

impl Params {
    pub fn init(config: &EncoderConfig, vision_dim: usize, text_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let h = config.adapter_hidden();
        let relu_gain = std::f64::consts::SQRT_2;
        let vision_hidden = Linear::init(vision_dim, config.vision_hidden, relu_gain, &mut rng);
        let vision_out = Linear::init(config.vision_hidden, d, 1.0, &mut rng);
        let text_proj = Linear::init(text_dim, d, 1.0, &mut rng);
        let diag_in = if config.head_input.reads_concepts() {
            config.n_concepts
        } else {
            d
        };
        let diag = Linear::init(diag_in, 2, 1.0, &mut rng);
        let mut adapter_hidden = Vec::with_capacity(config.n_concepts);
        let mut adapter_out = Vec::with_capacity(config.n_concepts);
        for _ in 0..config.n_concepts {
            adapter_hidden.push(Linear::init(d, h, relu_gain, &mut rng));
            adapter_out.push(Linear::init(h, 2, 1.0, &mut rng));
        }
        Self {
            vision_hidden,
            vision_out,
            text_proj,
            logit_scale: Array2::from_elem((1, 1), (1.0 / config.temperature_init).ln()),
            diag,
            adapter_hidden,
            adapter_out,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.fan_in(), l.fan_out());
        Self {
            vision_hidden: z(&self.vision_hidden),
            vision_out: z(&self.vision_out),
            text_proj: z(&self.text_proj),
            logit_scale: Array2::zeros((1, 1)),
            diag: z(&self.diag),
            adapter_hidden: self.adapter_hidden.iter().map(z).collect(),
            adapter_out: self.adapter_out.iter().map(z).collect(),
        }
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![
            ("vision_hidden".to_string(), &self.vision_hidden),
            ("vision_out".to_string(), &self.vision_out),
            ("text_proj".to_string(), &self.text_proj),
            ("diag".to_string(), &self.diag),
        ];
        for (i, (a, b)) in self.adapter_hidden.iter().zip(&self.adapter_out).enumerate() {
            out.push((format!("adapter{i}.hidden"), a));
            out.push((format!("adapter{i}.out"), b));
        }
        out
    }

    /// Named tensors in a fixed order shared with [`Params::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (name, lin) in self.linears() {
            out.push((format!("{name}.w"), &lin.w));
            out.push((format!("{name}.b"), &lin.b));
        }
        out.push(("logit_scale".to_string(), &self.logit_scale));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for lin in [
            &mut self.vision_hidden,
            &mut self.vision_out,
            &mut self.text_proj,
            &mut self.diag,
        ] {
            out.push(&mut lin.w);
            out.push(&mut lin.b);
        }
        for (a, b) in self.adapter_hidden.iter_mut().zip(self.adapter_out.iter_mut()) {
            out.push(&mut a.w);
            out.push(&mut a.b);
            out.push(&mut b.w);
            out.push(&mut b.b);
        }
        out.push(&mut self.logit_scale);
        out
    }

    pub fn temperature(&self) -> f64 {
        (-self.logit_scale[[0, 0]]).exp()
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub h_v: Array2<f64>,
    pub h_t: Option<Array2<f64>>,
    pub diag_logits: Array2<f64>,
    /// Shape `(B, N_c, 2)`.
    pub concept_logits: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub y_hat: f64,
    pub c_hat: Vec<f64>,
}

/// One training or evaluation batch of backbone features.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_v: Array2<f64>,
    pub x_t: Option<Array2<f64>>,
    pub labels: Vec<usize>,
    /// `{0,1}` matrix of shape `(B, N_c)`.
    pub concepts: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clip: f64,
    pub diag: f64,
    pub concept: f64,
    pub total: f64,
}

struct Cache {
    x_v: Array2<f64>,
    a1: Array2<f64>,
    g1: Array2<f64>,
    u_v: Array2<f64>,
    x_t: Option<Array2<f64>>,
    u_t: Option<Array2<f64>>,
    adapter_pre: Vec<Array2<f64>>,
    adapter_act: Vec<Array2<f64>>,
    concept_probs: Array2<f64>,
    diag_in: Array2<f64>,
}

/// Dual encoder with diagnostic head and per-concept adapters.
#[derive(Debug, Clone)]
pub struct ConceptModel {
    pub config: EncoderConfig,
    pub params: Params,
    vision: VisionBackbone,
    tokenizer: HashTokenizer,
}

impl ConceptModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let vision = VisionBackbone::from_id(&config.vision_backbone_id)?;
        let tokenizer = HashTokenizer::from_id(&config.text_backbone_id, config.max_tokens)?;
        let params = Params::init(&config, vision.dim(), tokenizer.vocab, seed);
        Ok(Self {
            config,
            params,
            vision,
            tokenizer,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Params) -> Result<Self, EncoderError> {
        let mut model = Self::new(config, 0)?;
        let expected: Vec<(String, (usize, usize))> = model
            .params
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.dim()))
            .collect();
        let found: Vec<(String, (usize, usize))> =
            params.tensors().into_iter().map(|(n, t)| (n, t.dim())).collect();
        if expected != found {
            return Err(EncoderError::ShapeMismatch(
                "parameter shapes do not match the configuration".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn vision(&self) -> &VisionBackbone {
        &self.vision
    }

    pub fn tokenizer(&self) -> &HashTokenizer {
        &self.tokenizer
    }

    /// Stacks backbone features of `(sample_id, image)` pairs.
    pub fn image_features(&self, items: &[(&str, &Raster)]) -> Result<Array2<f64>, EncoderError> {
        let dim = self.vision.dim();
        let mut out = Array2::zeros((items.len(), dim));
        for (i, (id, img)) in items.iter().enumerate() {
            let f = self.vision.features(id, img)?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
        }
        Ok(out)
    }

    pub fn text_features<S: AsRef<str>>(&self, texts: &[S]) -> Array2<f64> {
        let mut out = Array2::zeros((texts.len(), self.tokenizer.vocab));
        for (i, t) in texts.iter().enumerate() {
            let f = self.tokenizer.features(t.as_ref());
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
        }
        out
    }

    fn check_features(&self, x_v: &Array2<f64>) -> Result<(), EncoderError> {
        if x_v.ncols() != self.params.vision_hidden.fan_in() {
            return Err(EncoderError::ShapeMismatch(format!(
                "image features have {} columns, expected {}",
                x_v.ncols(),
                self.params.vision_hidden.fan_in()
            )));
        }
        Ok(())
    }

    /// Unit-norm image embeddings from pixels. Precomputed backbones need sample ids and
    /// go through [`ConceptModel::image_features`] instead.
    pub fn encode_image(&self, images: &[Raster]) -> Result<Array2<f64>, EncoderError> {
        if !self.vision.reads_pixels() {
            return Err(EncoderError::Backbone(
                "precomputed backbone needs sample ids; use image_features".into(),
            ));
        }
        let items: Vec<(&str, &Raster)> = images.iter().map(|r| ("", r)).collect();
        let x = self.image_features(&items)?;
        self.encode_image_features(&x)
    }

    pub fn encode_image_features(&self, x_v: &Array2<f64>) -> Result<Array2<f64>, EncoderError> {
        self.check_features(x_v)?;
        let p = &self.params;
        let g1 = gelu_forward(&p.vision_hidden.forward(x_v));
        Ok(l2_normalize_rows(&p.vision_out.forward(&g1)))
    }

    pub fn encode_text<S: AsRef<str>>(&self, texts: &[S]) -> Array2<f64> {
        let x = self.text_features(texts);
        l2_normalize_rows(&self.params.text_proj.forward(&x))
    }

    fn forward_cached(
        &self,
        x_v: &Array2<f64>,
        x_t: Option<&Array2<f64>>,
    ) -> Result<(ModelOutputs, Cache), EncoderError> {
        self.check_features(x_v)?;
        let p = &self.params;
        let b = x_v.nrows();
        let a1 = p.vision_hidden.forward(x_v);
        let g1 = gelu_forward(&a1);
        let u_v = p.vision_out.forward(&g1);
        let h_v = l2_normalize_rows(&u_v);

        let (u_t, h_t) = match (self.config.text_branch, x_t) {
            (true, Some(x_t)) => {
                if x_t.nrows() != b || x_t.ncols() != p.text_proj.fan_in() {
                    return Err(EncoderError::ShapeMismatch(format!(
                        "text features {:?} for {b} images",
                        x_t.dim()
                    )));
                }
                let u = p.text_proj.forward(x_t);
                let h = l2_normalize_rows(&u);
                (Some(u), Some(h))
            }
            _ => (None, None),
        };

        let n_c = self.config.n_concepts;
        let mut concept_logits = Array3::zeros((b, n_c, 2));
        let mut concept_probs = Array2::zeros((b, n_c));
        let mut adapter_pre = Vec::with_capacity(n_c);
        let mut adapter_act = Vec::with_capacity(n_c);
        for c in 0..n_c {
            let pre = p.adapter_hidden[c].forward(&h_v);
            let act = gelu_forward(&pre);
            let out = p.adapter_out[c].forward(&act);
            concept_logits.slice_mut(s![.., c, ..]).assign(&out);
            for i in 0..b {
                concept_probs[[i, c]] = sigmoid(out[[i, 1]] - out[[i, 0]]);
            }
            adapter_pre.push(pre);
            adapter_act.push(act);
        }

        let diag_in = if self.config.head_input.reads_concepts() {
            concept_probs.clone()
        } else {
            h_v.clone()
        };
        let diag_logits = p.diag.forward(&diag_in);
        let outputs = ModelOutputs {
            h_v,
            h_t,
            diag_logits,
            concept_logits,
        };
        let cache = Cache {
            x_v: x_v.clone(),
            a1,
            g1,
            u_v,
            x_t: x_t.cloned(),
            u_t,
            adapter_pre,
            adapter_act,
            concept_probs,
            diag_in,
        };
        Ok((outputs, cache))
    }

    pub fn forward(
        &self,
        x_v: &Array2<f64>,
        x_t: Option<&Array2<f64>>,
    ) -> Result<ModelOutputs, EncoderError> {
        Ok(self.forward_cached(x_v, x_t)?.0)
    }

    fn losses(
        &self,
        out: &ModelOutputs,
        batch: &Batch,
        weights: &LossWeights,
        direction: ClipDirection,
    ) -> Result<(LossBreakdown, super::loss::ClipLoss, Array2<f64>, Array3<f64>), EncoderError> {
        let tau = self.params.temperature();
        let clip = match (&out.h_t, weights.lambda > 0.0) {
            (Some(h_t), true) => clip_loss_directed(&out.h_v, h_t, tau, direction)?,
            _ => super::loss::ClipLoss {
                value: 0.0,
                grad_v: Array2::zeros(out.h_v.raw_dim()),
                grad_t: Array2::zeros(out.h_v.raw_dim()),
                grad_tau: 0.0,
            },
        };
        let (l_y, g_y) = diag_loss(&out.diag_logits, &batch.labels)?;
        let (l_c, g_c) = concept_loss(&out.concept_logits, &batch.concepts)?;
        let breakdown = LossBreakdown {
            clip: clip.value,
            diag: l_y,
            concept: l_c,
            total: total_loss(clip.value, l_y, l_c, weights),
        };
        Ok((breakdown, clip, g_y, g_c))
    }

    pub fn evaluate_loss(
        &self,
        batch: &Batch,
        weights: &LossWeights,
        direction: ClipDirection,
    ) -> Result<LossBreakdown, EncoderError> {
        let out = self.forward(&batch.x_v, batch.x_t.as_ref())?;
        Ok(self.losses(&out, batch, weights, direction)?.0)
    }

    /// Weighted loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        weights: &LossWeights,
        direction: ClipDirection,
    ) -> Result<(LossBreakdown, Params), EncoderError> {
        let (out, cache) = self.forward_cached(&batch.x_v, batch.x_t.as_ref())?;
        let (breakdown, clip, g_y, g_c) = self.losses(&out, batch, weights, direction)?;
        let p = &self.params;
        let mut grad = p.zeros_like();

        let d_diag_logits = g_y * weights.mu;
        let mut d_concept_logits = g_c * weights.nu;
        let mut d_h_v = &clip.grad_v * weights.lambda;

        let d_diag_in = p.diag.backward(&cache.diag_in, &d_diag_logits, &mut grad.diag);
        match self.config.head_input {
            HeadInput::Embedding => d_h_v += &d_diag_in,
            HeadInput::ConceptProbabilities => {
                for ((i, c), &dp) in d_diag_in.indexed_iter() {
                    let q = cache.concept_probs[[i, c]];
                    let dl = dp * q * (1.0 - q);
                    d_concept_logits[[i, c, 1]] += dl;
                    d_concept_logits[[i, c, 0]] -= dl;
                }
            }
            HeadInput::DetachedConceptProbabilities => {}
        }

        for c in 0..self.config.n_concepts {
            let d_out = d_concept_logits.slice(s![.., c, ..]).to_owned();
            let d_act = p.adapter_out[c].backward(&cache.adapter_act[c], &d_out, &mut grad.adapter_out[c]);
            let d_pre = gelu_backward(&cache.adapter_pre[c], &d_act);
            d_h_v += &p.adapter_hidden[c].backward(&out.h_v, &d_pre, &mut grad.adapter_hidden[c]);
        }

        let d_u_v = l2_normalize_backward(&cache.u_v, &out.h_v, &d_h_v);
        let d_g1 = p.vision_out.backward(&cache.g1, &d_u_v, &mut grad.vision_out);
        let d_a1 = gelu_backward(&cache.a1, &d_g1);
        p.vision_hidden.backward_params(&cache.x_v, &d_a1, &mut grad.vision_hidden);

        if let (Some(x_t), Some(u_t), Some(h_t)) = (&cache.x_t, &cache.u_t, &out.h_t) {
            let d_h_t = &clip.grad_t * weights.lambda;
            let d_u_t = l2_normalize_backward(u_t, h_t, &d_h_t);
            p.text_proj.backward_params(x_t, &d_u_t, &mut grad.text_proj);
        }

        if self.config.temperature_learnable {
            // τ = exp(-s), so dL/ds = -τ dL/dτ
            grad.logit_scale[[0, 0]] = -weights.lambda * self.params.temperature() * clip.grad_tau;
        }
        Ok((breakdown, grad))
    }

    /// Probabilities from backbone features.
    pub fn predict_features(&self, x_v: &Array2<f64>) -> Result<Vec<Predictions>, EncoderError> {
        let out = self.forward(x_v, None)?;
        Ok(predictions_from_outputs(&out))
    }

    pub fn predict(&self, sample_id: &str, image: &Raster) -> Result<Predictions, EncoderError> {
        let x = self.image_features(&[(sample_id, image)])?;
        Ok(self.predict_features(&x)?.remove(0))
    }

    /// Keeps `1/τ` within `[1, MAX_LOGIT_SCALE]` after an update.
    pub fn clamp_temperature(&mut self) {
        let s = &mut self.params.logit_scale[[0, 0]];
        *s = s.clamp(0.0, MAX_LOGIT_SCALE.ln());
    }
}

pub fn predictions_from_outputs(out: &ModelOutputs) -> Vec<Predictions> {
    let b = out.diag_logits.nrows();
    (0..b)
        .map(|i| Predictions {
            y_hat: sigmoid(out.diag_logits[[i, 1]] - out.diag_logits[[i, 0]]),
            c_hat: out
                .concept_logits
                .index_axis(Axis(0), i)
                .rows()
                .into_iter()
                .map(|r| sigmoid(r[1] - r[0]))
                .collect(),
        })
        .collect()
}
