//! Character n-gram cosine baseline.
//!
//! Profiles count character n-grams (Unicode scalar values, case preserved)
//! for every order in `n_min..=n_max` pooled into one sparse vector. Raw
//! weighting uses the counts directly; tf-idf multiplies each count by
//! `ln(1 + n_docs / df)` when a fitted [`DfTable`] is attached, and falls
//! back to raw counts otherwise.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Scorer, VerifierError, VerifierScore, Weighting};

/// Sparse character n-gram counts. `BTreeMap` keeps iteration order
/// deterministic, which makes the cosine bit-exactly symmetric.
pub type NgramCounts = BTreeMap<String, usize>;

/// Counts all character n-grams of orders `n_min..=n_max` in `text`.
pub fn ngram_profile(text: &str, n_min: usize, n_max: usize) -> NgramCounts {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = NgramCounts::new();
    for n in n_min..=n_max {
        if n == 0 || chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Document frequencies fitted over a corpus, used for tf-idf weighting.
#[derive(Clone, Debug)]
pub struct DfTable {
    n_docs: usize,
    df: BTreeMap<String, usize>,
}

impl DfTable {
    pub fn fit<'a>(texts: impl Iterator<Item = &'a str>, n_min: usize, n_max: usize) -> Self {
        let mut n_docs = 0;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            n_docs += 1;
            for gram in ngram_profile(text, n_min, n_max).into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        DfTable { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// `ln(1 + n_docs / df)`. Grams never seen at fit time get the maximum
    /// weight (df floored at 1).
    pub fn weight(&self, gram: &str) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0).max(1);
        (1.0 + self.n_docs as f64 / df as f64).ln()
    }
}

pub struct NgramCosineScorer {
    n_min: usize,
    n_max: usize,
    weighting: Weighting,
    df: Option<Arc<DfTable>>,
}

impl NgramCosineScorer {
    pub fn new(n_min: usize, n_max: usize, weighting: Weighting) -> Result<Self, VerifierError> {
        super::ScorerSpec::NgramCosine {
            n_min,
            n_max,
            weighting,
        }
        .validate()?;
        Ok(NgramCosineScorer {
            n_min,
            n_max,
            weighting,
            df: None,
        })
    }

    /// Attaches a fitted document-frequency table; only consulted under
    /// tf-idf weighting.
    #[must_use]
    pub fn with_df(mut self, table: Arc<DfTable>) -> Self {
        self.df = Some(table);
        self
    }

    fn weighted(&self, counts: &NgramCounts) -> BTreeMap<String, f64> {
        let table = match (self.weighting, &self.df) {
            (Weighting::Tfidf, Some(table)) => Some(table),
            _ => None,
        };
        counts
            .iter()
            .map(|(gram, &count)| {
                let w = match table {
                    Some(t) => count as f64 * t.weight(gram),
                    None => count as f64,
                };
                (gram.clone(), w)
            })
            .collect()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    // Intersection is walked in sorted key order from `a`; every term is a
    // commutative product, so swapping arguments reproduces the identical
    // floating-point sum.
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    let norm_a = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(0.0, 1.0)
}

impl Scorer for NgramCosineScorer {
    fn name(&self) -> String {
        let weighting = match self.weighting {
            Weighting::Raw => "raw",
            Weighting::Tfidf => "tfidf",
        };
        format!("ngram_cosine({}-{},{})", self.n_min, self.n_max, weighting)
    }

    fn score_pair(&self, text_a: &str, text_b: &str) -> Result<VerifierScore, VerifierError> {
        let counts_a = ngram_profile(text_a, self.n_min, self.n_max);
        let counts_b = ngram_profile(text_b, self.n_min, self.n_max);
        // Identical profiles score exactly 1.0; this also covers texts too
        // short to produce any n-gram, which are indistinguishable under this
        // feature set.
        if counts_a == counts_b {
            return VerifierScore::new(1.0);
        }
        if counts_a.is_empty() || counts_b.is_empty() {
            return VerifierScore::new(0.0);
        }
        VerifierScore::new(cosine(&self.weighted(&counts_a), &self.weighted(&counts_b)))
    }
}
