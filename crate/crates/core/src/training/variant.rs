use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::encoder::{ConceptModel, EncoderConfig, HeadInput, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Concepts from the image, diagnosis from frozen concept probabilities, no text.
    CbmSequential,
    /// Contrastive training with the diagnosis read from concept probabilities only.
    ClipCbl,
    /// Contrastive training with diagnostic and concept heads both on `h_v`.
    ClipMtl,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::CbmSequential => "cbm_sequential",
            VariantKind::ClipCbl => "clip_cbl",
            VariantKind::ClipMtl => "clip_mtl",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cbm_sequential" | "cbm" => Ok(VariantKind::CbmSequential),
            "clip_cbl" => Ok(VariantKind::ClipCbl),
            "clip_mtl" => Ok(VariantKind::ClipMtl),
            _ => Err(format!(
                "unknown variant `{s}` (cbm_sequential, clip_cbl, clip_mtl)"
            )),
        }
    }
}

/// Where the contrastive text of a training sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSourceKind {
    None,
    EnrichedReports,
    LabelCaptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub use_guideline_text: bool,
    pub loss_weights: LossWeights,
}

impl VariantSpec {
    /// Full objective: contrastive alignment with enriched reports plus both heads.
    pub fn medcbr() -> Self {
        Self {
            kind: VariantKind::ClipMtl,
            use_guideline_text: true,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn cbm_baseline() -> Self {
        Self {
            kind: VariantKind::CbmSequential,
            use_guideline_text: false,
            loss_weights: LossWeights {
                lambda: 0.0,
                mu: 1.0,
                nu: 0.8,
            },
        }
    }

    pub fn clip_cbl() -> Self {
        Self {
            kind: VariantKind::ClipCbl,
            use_guideline_text: false,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        self.loss_weights.validate()?;
        if self.kind == VariantKind::CbmSequential {
            if self.loss_weights.lambda > 0.0 {
                return Err(TrainingError::InconsistentVariant(
                    "cbm_sequential has no text branch; lambda must be 0".into(),
                ));
            }
            if self.use_guideline_text {
                return Err(TrainingError::InconsistentVariant(
                    "cbm_sequential has no text branch; use_guideline_text must be false".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn text_source(&self) -> TextSourceKind {
        if self.kind == VariantKind::CbmSequential || self.loss_weights.lambda == 0.0 {
            TextSourceKind::None
        } else if self.use_guideline_text {
            TextSourceKind::EnrichedReports
        } else {
            TextSourceKind::LabelCaptions
        }
    }

    pub fn label(&self) -> String {
        let text = match self.text_source() {
            TextSourceKind::None => "",
            TextSourceKind::EnrichedReports => "+guideline",
            TextSourceKind::LabelCaptions => "-guideline",
        };
        format!("{}{text}", self.kind)
    }

    /// Directory-safe name: the kind, plus `_guideline` when trained on enriched reports.
    pub fn slug(&self) -> String {
        match self.text_source() {
            TextSourceKind::EnrichedReports => format!("{}_guideline", self.kind),
            _ => self.kind.to_string(),
        }
    }

    /// Encoder configuration wired for this variant.
    pub fn encoder_config(&self, base: &EncoderConfig) -> Result<EncoderConfig, TrainingError> {
        self.validate()?;
        let mut config = base.clone();
        config.head_input = match self.kind {
            VariantKind::CbmSequential => HeadInput::DetachedConceptProbabilities,
            VariantKind::ClipCbl => HeadInput::ConceptProbabilities,
            VariantKind::ClipMtl => HeadInput::Embedding,
        };
        config.text_branch = self.text_source() != TextSourceKind::None;
        config.validate()?;
        Ok(config)
    }
}

/// Assembles a freshly initialized model for `spec`.
pub fn build_variant(
    spec: &VariantSpec,
    enc_config: &EncoderConfig,
    seed: u64,
) -> Result<ConceptModel, TrainingError> {
    Ok(ConceptModel::new(spec.encoder_config(enc_config)?, seed)?)
}

/// The ablation ladder from the plain bottleneck model to the full objective.
pub fn ablation_ladder() -> Vec<VariantSpec> {
    vec![
        VariantSpec::cbm_baseline(),
        VariantSpec::clip_cbl(),
        VariantSpec {
            kind: VariantKind::ClipMtl,
            use_guideline_text: false,
            loss_weights: LossWeights::default(),
        },
        VariantSpec::medcbr(),
    ]
}
