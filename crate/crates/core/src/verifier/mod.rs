//! Verifier scorers and the trial decision rule.
//!
//! A scorer maps a pair of texts to a similarity score in `[0, 1]`, higher
//! meaning more likely the same author. Two scorers ship built in: a local
//! character n-gram cosine baseline and a remote JSON-over-HTTP scorer for
//! wrapping an external verification service. Scorers implement [`Scorer`]
//! and are built from a [`ScorerSpec`] by the name-keyed [`ScorerRegistry`],
//! so alternative backends can be registered without touching call sites.
//!
//! The decision rule is deliberately asymmetric at the boundary: a score
//! equal to the threshold decides same-author.

mod ngram;
mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TrialLabel;

pub use ngram::{ngram_profile, DfTable, NgramCosineScorer};
pub use remote::RemoteScorer;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("invalid scorer spec: {0}")]
    InvalidSpec(String),
    #[error("no scorer registered under {0:?}")]
    UnknownScorer(String),
    #[error("remote scorer {endpoint}: giving up after {attempts} attempts: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("remote scorer {endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("remote scorer {endpoint} returned out-of-range score {score}")]
    ScoreOutOfRange { endpoint: String, score: f64 },
}

/// A verifier similarity score, guaranteed finite and within `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerifierScore(f64);

impl VerifierScore {
    pub fn new(value: f64) -> Result<Self, VerifierError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(VerifierScore(value))
        } else {
            Err(VerifierError::InvalidSpec(format!(
                "score {value} is outside [0, 1]"
            )))
        }
    }

    #[must_use]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// N-gram weighting for the cosine baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Raw,
    Tfidf,
}

/// Declarative scorer selection, embeddable in run config files. The `kind`
/// tag doubles as the registry key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    NgramCosine {
        n_min: usize,
        n_max: usize,
        weighting: Weighting,
    },
    Remote {
        endpoint_url: String,
        timeout_ms: u64,
    },
}

impl ScorerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ScorerSpec::NgramCosine { .. } => "ngram_cosine",
            ScorerSpec::Remote { .. } => "remote",
        }
    }

    pub fn validate(&self) -> Result<(), VerifierError> {
        match self {
            ScorerSpec::NgramCosine { n_min, n_max, .. } => {
                if !(1 <= *n_min && n_min <= n_max && *n_max <= 8) {
                    return Err(VerifierError::InvalidSpec(format!(
                        "ngram orders must satisfy 1 <= n_min <= n_max <= 8, got {n_min}..{n_max}"
                    )));
                }
            }
            ScorerSpec::Remote {
                endpoint_url,
                timeout_ms,
            } => {
                if endpoint_url.is_empty() {
                    return Err(VerifierError::InvalidSpec(
                        "remote scorer endpoint_url is empty".into(),
                    ));
                }
                if *timeout_ms == 0 {
                    return Err(VerifierError::InvalidSpec(
                        "remote scorer timeout_ms must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Pairwise text scorer. Implementations must be safe to call from multiple
/// campaign workers at once.
pub trait Scorer: Send + Sync {
    fn name(&self) -> String;
    fn score_pair(&self, text_a: &str, text_b: &str) -> Result<VerifierScore, VerifierError>;
}

pub type ScorerFactory =
    Box<dyn Fn(&ScorerSpec) -> Result<Box<dyn Scorer>, VerifierError> + Send + Sync>;

/// Name-keyed scorer factories. [`ScorerRegistry::with_builtins`] registers
/// `ngram_cosine` and `remote`; callers may register additional kinds or
/// override the builtins before building from config.
pub struct ScorerRegistry {
    factories: BTreeMap<String, ScorerFactory>,
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        ScorerRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        registry.register("ngram_cosine", |spec| match spec {
            ScorerSpec::NgramCosine {
                n_min,
                n_max,
                weighting,
            } => Ok(Box::new(NgramCosineScorer::new(*n_min, *n_max, *weighting)?) as Box<dyn Scorer>),
            other => Err(VerifierError::InvalidSpec(format!(
                "ngram_cosine factory got a {} spec",
                other.kind_name()
            ))),
        });
        registry.register("remote", |spec| match spec {
            ScorerSpec::Remote {
                endpoint_url,
                timeout_ms,
            } => Ok(Box::new(RemoteScorer::new(endpoint_url.clone(), *timeout_ms)?) as Box<dyn Scorer>),
            other => Err(VerifierError::InvalidSpec(format!(
                "remote factory got a {} spec",
                other.kind_name()
            ))),
        });
        registry
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&ScorerSpec) -> Result<Box<dyn Scorer>, VerifierError> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Validates the spec and dispatches to the factory registered under its
    /// kind name.
    pub fn build(&self, spec: &ScorerSpec) -> Result<Box<dyn Scorer>, VerifierError> {
        spec.validate()?;
        let factory = self
            .factories
            .get(spec.kind_name())
            .ok_or_else(|| VerifierError::UnknownScorer(spec.kind_name().to_string()))?;
        factory(spec)
    }
}

/// Outcome of applying the operating threshold to one score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDecision {
    pub label: TrialLabel,
    pub score: f64,
    pub threshold_used: f64,
}

/// Scores at or above the threshold decide same-author; strictly below
/// decides different-author.
#[must_use]
pub fn decide(score: VerifierScore, threshold: f64) -> TrialDecision {
    let label = if score.value() >= threshold {
        TrialLabel::SameAuthor
    } else {
        TrialLabel::DifferentAuthor
    };
    TrialDecision {
        label,
        score: score.value(),
        threshold_used: threshold,
    }
}
