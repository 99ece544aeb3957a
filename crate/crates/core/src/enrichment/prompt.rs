use serde::{Deserialize, Serialize};

use super::EnrichmentError;
use crate::corpus::{ConceptBank, SampleRecord};
use crate::digest::sha256_hex;
use crate::guidelines::{Guideline, GuidelineKind, Modality};

pub const CONCEPT_BLOCK_HEADER: &str =
    "Finally, you are given the following 'concepts' that are present in the image.\n";
pub const REPORT_INSTRUCTION: &str =
    "Write a report based on the image, the guideline provided, and the concepts present in the image.";

/// Free-text slots of the report template. `{label}` in `auxiliary_template` is replaced
/// by the sample's label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub modality_text: String,
    pub auxiliary_template: String,
    pub type_of_guideline: String,
}

impl PromptOptions {
    pub fn for_modality(modality: Modality) -> Self {
        match modality {
            Modality::Ultrasound => Self {
                modality_text: "breast ultrasound".into(),
                auxiliary_template: "The pathology of the lesion is {label}.".into(),
                type_of_guideline: "BI-RADS reporting".into(),
            },
            Modality::Mammography => Self {
                modality_text: "mammography".into(),
                auxiliary_template: "The pathology of the lesion is {label}.".into(),
                type_of_guideline: "BI-RADS reporting".into(),
            },
            Modality::FieldGuide => Self {
                modality_text: "bird".into(),
                auxiliary_template: "The species is {label}.".into(),
                type_of_guideline: "field guide".into(),
            },
        }
    }
}

/// Inputs of one enrichment call.
#[derive(Debug, Clone)]
pub struct EnrichmentRequest<'a> {
    pub sample: &'a SampleRecord,
    pub bank: &'a ConceptBank,
    pub guideline: &'a Guideline,
    pub label_text: String,
    pub options: &'a PromptOptions,
}

impl<'a> EnrichmentRequest<'a> {
    pub fn new(
        sample: &'a SampleRecord,
        bank: &'a ConceptBank,
        guideline: &'a Guideline,
        options: &'a PromptOptions,
    ) -> Result<Self, EnrichmentError> {
        if guideline.kind != GuidelineKind::Reporting {
            return Err(EnrichmentError::WrongGuidelineKind(
                guideline.guideline_id.clone(),
                guideline.kind,
            ));
        }
        if sample.concepts.len() != bank.len() {
            return Err(EnrichmentError::LengthMismatch {
                expected: bank.len(),
                found: sample.concepts.len(),
            });
        }
        Ok(Self {
            sample,
            bank,
            guideline,
            label_text: sample.label.to_string(),
            options,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LvlmPrompt {
    pub text: String,
    pub prompt_hash: String,
}

/// Display names of the concepts set in `concepts`, in bank order.
pub fn extract_positive_concepts(
    concepts: &[bool],
    bank: &ConceptBank,
) -> Result<Vec<String>, EnrichmentError> {
    if concepts.len() != bank.len() {
        return Err(EnrichmentError::LengthMismatch {
            expected: bank.len(),
            found: concepts.len(),
        });
    }
    Ok(bank
        .entries()
        .iter()
        .zip(concepts)
        .filter(|(_, &on)| on)
        .map(|(e, _)| e.display_name.clone())
        .collect())
}

/// Renders the report-generation prompt.
pub fn build_lvlm_prompt(request: &EnrichmentRequest<'_>) -> LvlmPrompt {
    let positives = extract_positive_concepts(&request.sample.concepts, request.bank)
        .expect("request validated on construction");
    let mut concept_data = String::from(CONCEPT_BLOCK_HEADER);
    for name in positives {
        concept_data.push_str(&name);
        concept_data.push_str(": 1\n");
    }
    let opts = request.options;
    let auxiliary = opts.auxiliary_template.replace("{label}", &request.label_text);
    let text = format!(
        "\nYou are given the following {modality} <image>. {auxiliary}\n\
         You are also given the following {kind} guideline:\n\
         \n\
         {guideline}\n\
         \n\
         {concept_data}\n\
         \n\
         {REPORT_INSTRUCTION}\n",
        modality = opts.modality_text,
        kind = opts.type_of_guideline,
        guideline = request.guideline.text,
    );
    LvlmPrompt {
        prompt_hash: sha256_hex(&text),
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::guidelines::GuidelineRegistry;
    use proptest::prelude::*;

    fn record(concepts: Vec<bool>) -> SampleRecord {
        SampleRecord {
            sample_id: "s".into(),
            patient_id: "p".into(),
            image_path: "x.png".into(),
            concepts,
            label: Label::Benign,
            birads: None,
            split_tag: None,
        }
    }

    #[test]
    fn positive_concepts() {
        let bank = ConceptBank::builtin("breast_us").unwrap();
        assert!(extract_positive_concepts(&[false; 15], &bank).unwrap().is_empty());
        let mut c = vec![false; 15];
        c[bank.index_of("spiculated").unwrap()] = true;
        c[bank.index_of("hypoechoic").unwrap()] = true;
        assert_eq!(
            extract_positive_concepts(&c, &bank).unwrap(),
            vec!["Spiculated", "Hypoechoic"]
        );
        let all: Vec<String> = bank.display_names().map(str::to_string).collect();
        assert_eq!(extract_positive_concepts(&[true; 15], &bank).unwrap(), all);
        assert!(extract_positive_concepts(&[true; 3], &bank).is_err());
    }

    #[test]
    fn empty_concept_block_keeps_header() {
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let s = record(vec![false; 15]);
        let p = build_lvlm_prompt(&EnrichmentRequest::new(&s, &bank, g, &opts).unwrap());
        assert!(p.text.contains(&format!("{CONCEPT_BLOCK_HEADER}\n\n{REPORT_INSTRUCTION}")));
        assert_eq!(p, build_lvlm_prompt(&EnrichmentRequest::new(&s, &bank, g, &opts).unwrap()));
    }

    #[test]
    fn rejects_diagnostic_guideline() {
        let bank = ConceptBank::builtin("breast_us").unwrap();
        let reg = GuidelineRegistry::builtin();
        let g = reg.get(GuidelineKind::Diagnostic, Modality::Ultrasound).unwrap();
        let opts = PromptOptions::for_modality(Modality::Ultrasound);
        let s = record(vec![false; 15]);
        assert!(EnrichmentRequest::new(&s, &bank, g, &opts).is_err());
    }

    proptest! {
        #[test]
        fn concept_block_lists_exactly_the_positives(bits in proptest::collection::vec(any::<bool>(), 15)) {
            let bank = ConceptBank::builtin("breast_us").unwrap();
            let reg = GuidelineRegistry::builtin();
            let g = reg.get(GuidelineKind::Reporting, Modality::Ultrasound).unwrap();
            let opts = PromptOptions::for_modality(Modality::Ultrasound);
            let s = record(bits.clone());
            let p = build_lvlm_prompt(&EnrichmentRequest::new(&s, &bank, g, &opts).unwrap());
            let start = p.text.find(CONCEPT_BLOCK_HEADER).unwrap() + CONCEPT_BLOCK_HEADER.len();
            let end = p.text.find(REPORT_INSTRUCTION).unwrap();
            let block = &p.text[start..end];
            for (entry, on) in bank.entries().iter().zip(&bits) {
                let line = format!("{}: 1\n", entry.display_name);
                prop_assert_eq!(block.contains(&line), *on);
            }
        }
    }
}
