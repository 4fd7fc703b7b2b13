//! Retrosynthesis toolkit: molecular graphs, reaction data handling,
//! template extraction, a rule-based baseline predictor and evaluation.

pub mod chem;
pub mod data;
pub mod eval;
pub mod expert;
pub mod synth;
pub mod templates;
