use serde::{Deserialize, Serialize};

use super::ReasoningError;
use crate::corpus::ConceptBank;
use crate::digest::sha256_hex;
use crate::encoder::Predictions;
use crate::guidelines::{Guideline, GuidelineKind, Modality};

/// Concept probabilities at or above this value are listed in the prompt.
pub const CONCEPT_THRESHOLD: f64 = 0.5;

pub const INTRODUCTION_TEMPLATE: &str = "You are given the final diagnostic prediction of an AI system, which is {diagnosis}. The system also detected the following concepts:\n";

pub const BIRADS_INSTRUCTIONS: &str = "Assuming the diagnosis is correct, explain the implications of these concepts according to the BI-RADS clinical guideline provided. Interpret each concept, assess agreement with the predicted diagnosis, infer the most likely BI-RADS category, and provide a recommended follow-up.\n";

pub const FIELD_GUIDE_INSTRUCTIONS: &str = "Assuming the diagnosis is correct, explain the implications of these concepts according to the field guide provided. Interpret each concept, assess agreement with the predicted diagnosis, infer the most likely BI-RADS category, and provide a recommended follow-up.\n";

const REGULAR_SHAPE_KEY: &str = "regular_shape";
const IRREGULAR_SHAPE: &str = "Irregular shape";

/// Whether `corpus_name` denotes the breast-ultrasound corpus, whose `regular_shape`
/// concept is reported as "Irregular shape" when below threshold.
pub fn is_breast_ultrasound(corpus_name: &str) -> bool {
    let norm: String = corpus_name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    matches!(norm.as_str(), "breastus" | "busbra" | "breastultrasound")
}

/// Task instruction for a guideline's modality.
pub fn instructions_for(modality: Modality) -> &'static str {
    match modality {
        Modality::FieldGuide => FIELD_GUIDE_INSTRUCTIONS,
        Modality::Ultrasound | Modality::Mammography => BIRADS_INSTRUCTIONS,
    }
}

/// Name of the predicted class at the 0.5 operating point.
pub fn diagnosis_text(y_hat: f64, modality: Modality) -> &'static str {
    let positive = y_hat >= 0.5;
    match (modality, positive) {
        (Modality::FieldGuide, true) => "positive",
        (Modality::FieldGuide, false) => "negative",
        (_, true) => "malignant",
        (_, false) => "benign",
    }
}

/// `Name (91.0%)`.
pub fn concept_line(name: &str, probability: f64) -> String {
    format!("{name} ({:.1}%)", probability * 100.0)
}

/// Concept names the grounding check looks for in explanations.
pub fn concept_vocabulary(bank: &ConceptBank, corpus_name: &str) -> Vec<String> {
    let mut names: Vec<String> = bank.display_names().map(str::to_string).collect();
    if is_breast_ultrasound(corpus_name) && bank.index_of(REGULAR_SHAPE_KEY).is_some() {
        names.push(IRREGULAR_SHAPE.to_string());
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPrompt {
    pub task_instruction: String,
    pub diagnosis_text: String,
    pub concept_lines: Vec<String>,
    pub guideline: Guideline,
    pub concept_vocabulary: Vec<String>,
    pub rendered: String,
    pub prompt_hash: String,
}

impl ReasoningPrompt {
    /// Canonical rendering of the components: introduction with the diagnosis, the concept
    /// block, the instruction, then the guideline.
    pub fn render(
        task_instruction: &str,
        diagnosis_text: &str,
        concept_lines: &[String],
        guideline_text: &str,
    ) -> String {
        let introduction = INTRODUCTION_TEMPLATE.replace("{diagnosis}", diagnosis_text);
        let concept_data: String = concept_lines.iter().map(|l| format!("{l}\n")).collect();
        format!("{introduction}\n{concept_data}\n{task_instruction}\n{guideline_text}\n")
    }

    pub fn is_consistent(&self) -> bool {
        let again = Self::render(
            &self.task_instruction,
            &self.diagnosis_text,
            &self.concept_lines,
            &self.guideline.text,
        );
        again == self.rendered && sha256_hex(&again) == self.prompt_hash
    }
}

/// Renders the reasoning prompt for one prediction.
pub fn build_reasoning_prompt(
    pred: &Predictions,
    bank: &ConceptBank,
    guideline: &Guideline,
    corpus_name: &str,
) -> Result<ReasoningPrompt, ReasoningError> {
    if guideline.kind != GuidelineKind::Diagnostic {
        return Err(ReasoningError::WrongGuidelineKind(guideline.guideline_id.clone()));
    }
    if pred.c_hat.len() != bank.len() {
        return Err(ReasoningError::ConceptCount {
            expected: bank.len(),
            found: pred.c_hat.len(),
        });
    }
    let breast_us = is_breast_ultrasound(corpus_name);
    let mut concept_lines = Vec::new();
    for (entry, &p) in bank.entries().iter().zip(&pred.c_hat) {
        if p >= CONCEPT_THRESHOLD {
            concept_lines.push(concept_line(&entry.display_name, p));
        } else if breast_us && entry.key == REGULAR_SHAPE_KEY {
            // the score printed is the regular-shape probability itself
            concept_lines.push(concept_line(IRREGULAR_SHAPE, p));
        }
    }
    let task_instruction = instructions_for(guideline.modality).to_string();
    let diagnosis = diagnosis_text(pred.y_hat, guideline.modality).to_string();
    let rendered = ReasoningPrompt::render(&task_instruction, &diagnosis, &concept_lines, &guideline.text);
    Ok(ReasoningPrompt {
        prompt_hash: sha256_hex(&rendered),
        task_instruction,
        diagnosis_text: diagnosis,
        concept_lines,
        guideline: guideline.clone(),
        concept_vocabulary: concept_vocabulary(bank, corpus_name),
        rendered,
    })
}
