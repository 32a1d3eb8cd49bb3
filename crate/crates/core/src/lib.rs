//! Robustness evaluation harness for authorship verification systems.
//!
//! The pipeline: load a corpus of documents and labeled trial pairs, calibrate
//! a decision threshold from detection-error tradeoff curves, run attack
//! campaigns (style obfuscation or author impersonation) through an LLM
//! gateway, and report attack success rates alongside semantic-preservation
//! metrics.
//!
//! Interchangeable pieces (verifier scorers, attack strategies) live behind
//! traits and are built from config by name-keyed registries, so new variants
//! plug in without touching the campaign drivers.

pub mod calibration;
pub mod campaign;
pub mod corpus;
pub mod gateway;
pub mod impersonation;
pub mod metrics;
pub mod obfuscation;
pub mod report;
pub mod testing;
pub mod verifier;
