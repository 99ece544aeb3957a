//! Concept-based medical reasoning pipeline.
//!
//! The crate wires together five stages:
//!
//! * [`corpus`]: manifests, concept banks, patient-level folds, image preprocessing and a
//!   synthetic concept-encoded dataset for desk-scale runs.
//! * [`guidelines`] and [`enrichment`]: guideline-conditioned report generation through a
//!   pluggable [`enrichment::GenerationClient`] with an on-disk cache.
//! * [`encoder`] and [`training`]: a dual-encoder concept model trained with a contrastive,
//!   concept and diagnostic objective, plus the ablation variants.
//! * [`reasoning`]: structured reasoning prompts, explanation parsing and grounding checks.
//! * [`metrics`]: AUROC and friends, per-concept AUROC, the reviewer rubric and blinded
//!   case bundles.
//!
//! The [`cli`] module exposes all of it as the `medcbr` command.

pub mod cli;
pub mod corpus;
pub mod digest;
pub mod encoder;
pub mod enrichment;
pub mod guidelines;
pub mod metrics;
pub mod reasoning;
pub mod training;
