//! Cognitive-impairment phenotyping from clinical notes.
//!
//! The pipeline extracts keyword-anchored windows ("sequences") from notes,
//! labels them Yes / No / Neither with manual and always-pattern annotations,
//! trains a TF-IDF + L1 logistic-regression classifier, evaluates it, and
//! rolls sequence predictions up to patient-level assignments.

pub mod annotation;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod extract;
pub mod jsonl;
pub mod linear;
pub mod manifest;
pub mod patients;
pub mod pipeline;
pub mod protocol;
pub mod server;
pub mod synth;
pub mod tfidf;
pub mod training;

pub use corpus::Label;
pub use error::{Error, Result};
