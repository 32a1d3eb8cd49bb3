//! Attack-success accounting and semantic-consistency metrics.
//!
//! ASR is a fraction in [0, 1] over eligible records; the semantic scores
//! (token-overlap BLEU-4, longest-common-subsequence F1, embedding
//! greedy-match F1) are reported on a 0 to 100 scale. All three compare the
//! perturbed text against the original version of the same document, so a
//! perfect-copy perturbation scores exactly 100.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no eligible records; cannot form a success rate")]
    EmptyDenominator,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How a campaign left one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    /// Perturbed and rescored; counts toward the denominator.
    Attacked,
    /// Initially misclassified, never perturbed; excluded from the rate.
    Skipped,
    /// Perturbation or rescoring failed; excluded, counted separately.
    Failed,
}

/// Minimal view of a campaign record needed for success accounting. Both
/// campaign record shapes implement it.
pub trait OutcomeRecord {
    fn status(&self) -> RecordStatus;
    fn flipped(&self) -> bool;
}

/// Fraction of attacked records whose decision flipped. Skipped and failed
/// records never enter the denominator.
pub fn attack_success_rate<R: OutcomeRecord>(records: &[R]) -> Result<f64, MetricsError> {
    let eligible = records
        .iter()
        .filter(|r| r.status() == RecordStatus::Attacked)
        .count();
    if eligible == 0 {
        return Err(MetricsError::EmptyDenominator);
    }
    let flipped = records
        .iter()
        .filter(|r| r.status() == RecordStatus::Attacked && r.flipped())
        .count();
    Ok(flipped as f64 / eligible as f64)
}

/// Per-record semantic scores, bundled so campaign records can carry them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub embed_f1: f64,
}

/// One campaign's summary row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub asr: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub embed_f1: f64,
    pub n_eligible: usize,
    pub n_flipped: usize,
    pub n_skipped: usize,
    pub n_failed: usize,
}

fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'a>(toks: &'a [&'a str], n: usize) -> BTreeMap<&'a [&'a str], usize> {
    let mut counts = BTreeMap::new();
    if toks.len() >= n {
        for gram in toks.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Precision floor for n-gram orders with no matches (or no n-grams at all),
/// keeping the geometric mean finite.
const BLEU_FLOOR: f64 = 1e-9;

/// Sentence-level BLEU with orders 1 through 4, uniform weights, clipped
/// (modified) precisions, and the short-candidate brevity penalty
/// exp(1 - r/c). Tokens are whitespace-split and case-sensitive; the result
/// is scaled to [0, 100]. Equal token sequences short-circuit to exactly 100
/// so identity holds even for texts shorter than four tokens.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    if cand == refr {
        return 100.0;
    }
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts = ngram_counts(&refr, n);
        let total: usize = cand_counts.values().sum();
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if total == 0 || matched == 0 {
            BLEU_FLOOR
        } else {
            matched as f64 / total as f64
        };
        log_sum += 0.25 * precision.ln();
    }

    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    brevity * log_sum.exp() * 100.0
}

/// Longest-common-subsequence F1 over whitespace tokens, scaled to [0, 100].
/// Symmetric in its arguments.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return if cand == refr { 100.0 } else { 0.0 };
    }
    let lcs = lcs_length(&cand, &refr);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / cand.len() as f64;
    let recall = lcs as f64 / refr.len() as f64;
    2.0 * precision * recall / (precision + recall) * 100.0
}

fn lcs_length(a: &[&str], b: &[&str]) -> usize {
    // One-row DP; prev holds the diagonal value before it is overwritten.
    let mut row = vec![0usize; b.len() + 1];
    for &tok_a in a {
        let mut prev = 0;
        for (j, &tok_b) in b.iter().enumerate() {
            let diagonal = prev;
            prev = row[j + 1];
            row[j + 1] = if tok_a == tok_b {
                diagonal + 1
            } else {
                row[j + 1].max(row[j])
            };
        }
    }
    row[b.len()]
}

/// Embedding-based greedy-match F1, scaled to [0, 100].
///
/// Each whitespace token is embedded independently, one batched endpoint
/// call per text. Precision is the mean over candidate tokens of the best
/// cosine against any reference token (negative cosines floored at zero),
/// recall is symmetric, and the score is their harmonic mean. Equal token
/// sequences short-circuit to exactly 100 without touching the endpoint.
pub fn embed_f1(
    candidate: &str,
    reference: &str,
    gateway: &Gateway,
) -> Result<f64, MetricsError> {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    if cand == refr {
        return Ok(100.0);
    }
    if cand.is_empty() || refr.is_empty() {
        return Ok(0.0);
    }

    let cand_vecs = gateway.embed(&cand)?;
    let ref_vecs = gateway.embed(&refr)?;
    if let (Some(a), Some(b)) = (cand_vecs.first(), ref_vecs.first()) {
        if a.dim() != b.dim() {
            return Err(MetricsError::Gateway(GatewayError::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            }));
        }
    }

    let best = |from: &crate::gateway::EmbeddingVector,
                against: &[crate::gateway::EmbeddingVector]| {
        against
            .iter()
            .map(|v| from.cosine(v).max(0.0))
            .fold(0.0f64, f64::max)
    };
    let precision: f64 =
        cand_vecs.iter().map(|v| best(v, &ref_vecs)).sum::<f64>() / cand_vecs.len() as f64;
    let recall: f64 =
        ref_vecs.iter().map(|v| best(v, &cand_vecs)).sum::<f64>() / ref_vecs.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, GatewayMode};
    use crate::testing::{StubResponse, StubServer};
    use proptest::prelude::*;
    use serde_json::json;

    struct FakeRecord {
        status: RecordStatus,
        flipped: bool,
    }

    impl OutcomeRecord for FakeRecord {
        fn status(&self) -> RecordStatus {
            self.status
        }
        fn flipped(&self) -> bool {
            self.flipped
        }
    }

    fn records(attacked_flipped: usize, attacked_nonflip: usize, skipped: usize) -> Vec<FakeRecord> {
        let mut out = Vec::new();
        for _ in 0..attacked_flipped {
            out.push(FakeRecord {
                status: RecordStatus::Attacked,
                flipped: true,
            });
        }
        for _ in 0..attacked_nonflip {
            out.push(FakeRecord {
                status: RecordStatus::Attacked,
                flipped: false,
            });
        }
        for _ in 0..skipped {
            out.push(FakeRecord {
                status: RecordStatus::Skipped,
                flipped: false,
            });
        }
        out
    }

    #[test]
    fn asr_counts_flips_over_eligible() {
        assert_eq!(attack_success_rate(&records(8, 2, 0)).unwrap(), 0.8);
        assert_eq!(attack_success_rate(&records(0, 5, 0)).unwrap(), 0.0);
    }

    #[test]
    fn asr_excludes_skipped_from_denominator() {
        assert_eq!(attack_success_rate(&records(3, 0, 2)).unwrap(), 1.0);
    }

    #[test]
    fn asr_requires_eligible_records() {
        assert!(matches!(
            attack_success_rate(&records(0, 0, 4)),
            Err(MetricsError::EmptyDenominator)
        ));
        assert!(matches!(
            attack_success_rate::<FakeRecord>(&[]),
            Err(MetricsError::EmptyDenominator)
        ));
    }

    #[test]
    fn bleu_identity_is_exactly_one_hundred() {
        assert_eq!(bleu("the cat sat", "the cat sat"), 100.0);
        // Shorter than the longest n-gram order; the floor must not leak in.
        assert_eq!(bleu("hi", "hi"), 100.0);
        assert_eq!(bleu("a  b", "a b"), 100.0);
    }

    #[test]
    fn bleu_dropped_token_fixture() {
        // Precisions 1, 3/4, 2/3, 1/2 with brevity penalty e^(-1/5).
        let got = bleu("the cat sat on mat", "the cat sat on the mat");
        assert!((got - 57.9).abs() < 0.1, "got {got}");
        assert!((got - 57.89300674674098).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn bleu_pure_prefix_fixture() {
        // All precisions 1; only the brevity penalty e^(-1/4) remains.
        let got = bleu("a b c d", "a b c d e");
        assert!((got - 77.8800783071405).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn bleu_disjoint_vocabulary_is_floored_near_zero() {
        let got = bleu("x y z", "p q r");
        assert!(got < 1e-3, "got {got}");
        assert!(got > 0.0);
    }

    #[test]
    fn bleu_longer_candidate_has_no_brevity_penalty() {
        let with_extra = bleu("a b c d e f g h", "a b c d e f g");
        let exact = bleu("a b c d e f g", "a b c d e f g");
        assert!(with_extra < exact);
        assert!(with_extra > 50.0, "got {with_extra}");
    }

    #[test]
    fn bleu_drops_when_a_matched_gram_loses_its_middle() {
        let reference = "the cat sat on the mat today";
        let intact = bleu("the cat sat on the mat now", reference);
        let broken = bleu("the cat sat the mat now", reference);
        assert!(broken <= intact, "{broken} vs {intact}");
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        assert_eq!(rouge_l("same text here", "same text here"), 100.0);
        assert_eq!(rouge_l("x y", "p q"), 0.0);
    }

    #[test]
    fn rouge_subsequence_fixtures() {
        // LCS 3 of candidate length 3, reference length 6.
        let got = rouge_l("the cat sat", "the cat sat on the mat");
        assert!((got - 66.67).abs() < 0.1, "got {got}");
        assert!((got - 66.66666666666666).abs() < 1e-9);
        // LCS 3, lengths 3 and 5.
        let got = rouge_l("a b c", "a b c d e");
        assert!((got - 75.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn rouge_is_symmetric() {
        let a = "one two three four";
        let b = "one three five";
        assert_eq!(rouge_l(a, b), rouge_l(b, a));
    }

    #[test]
    fn rouge_handles_interleaved_subsequence() {
        // LCS of "a b" against "a x b" is 2.
        let got = rouge_l("a b", "a x b");
        let expected = 2.0 * (2.0 / 2.0) * (2.0 / 3.0) / (1.0 + 2.0 / 3.0) * 100.0;
        assert!((got - expected).abs() < 1e-9);
    }

    fn gateway_for(url: &str) -> Gateway {
        let config = GatewayConfig {
            chat_endpoint: String::new(),
            embed_endpoint: format!("{url}/embed"),
            model_name: "stub".into(),
            temperature: 0.0,
            max_retries: 0,
            concurrency_limit: 2,
            mode: GatewayMode::Live,
            transcript_path: None,
        };
        Gateway::new(config).unwrap()
    }

    /// Embed stub mapping fixed tokens to fixed vectors.
    fn vector_server(map: Vec<(&'static str, Vec<f64>)>) -> StubServer {
        StubServer::spawn(move |req| {
            let inputs = req.body["input"].as_array().unwrap().clone();
            let data: Vec<serde_json::Value> = inputs
                .iter()
                .map(|t| {
                    let text = t.as_str().unwrap();
                    let vector = map
                        .iter()
                        .find(|(token, _)| *token == text)
                        .map(|(_, v)| v.clone())
                        .unwrap_or_else(|| panic!("no vector for {text:?}"));
                    json!({ "embedding": vector })
                })
                .collect();
            StubResponse::json(200, json!({ "data": data }))
        })
    }

    #[test]
    fn embed_f1_identity_never_calls_the_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "").unwrap();
        let config = GatewayConfig {
            chat_endpoint: String::new(),
            embed_endpoint: "http://127.0.0.1:9/none".into(),
            model_name: "stub".into(),
            temperature: 0.0,
            max_retries: 0,
            concurrency_limit: 1,
            mode: GatewayMode::Replay,
            transcript_path: Some(path),
        };
        let gateway = Gateway::new(config).unwrap();
        // An empty replay transcript would fail any embed call, so success
        // proves the identity shortcut.
        assert_eq!(embed_f1("same here", "same here", &gateway).unwrap(), 100.0);
    }

    #[test]
    fn embed_f1_two_token_cosine_table() {
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let server = vector_server(vec![
            ("t1", vec![1.0, 0.0]),
            ("t2", vec![0.0, 1.0]),
            ("t3", vec![inv, inv]),
        ]);
        let gateway = gateway_for(&server.url());
        let got = embed_f1("t1 t2", "t1 t3", &gateway).unwrap();
        // Greedy maxima: candidate side (1, 1/sqrt2), reference side equal.
        let expected = (1.0 + inv) / 2.0 * 100.0;
        assert!((got - expected).abs() < 1e-9, "got {got}");
        assert!((got - 85.35533905932738).abs() < 1e-9);
    }

    #[test]
    fn embed_f1_orthogonal_tokens_score_zero() {
        let server = vector_server(vec![
            ("t1", vec![1.0, 0.0, 0.0, 0.0]),
            ("t2", vec![0.0, 1.0, 0.0, 0.0]),
            ("t3", vec![0.0, 0.0, 1.0, 0.0]),
            ("t4", vec![0.0, 0.0, 0.0, 1.0]),
        ]);
        let gateway = gateway_for(&server.url());
        assert_eq!(embed_f1("t1 t2", "t3 t4", &gateway).unwrap(), 0.0);
    }

    #[test]
    fn embed_f1_negative_cosines_floor_at_zero() {
        let server = vector_server(vec![
            ("t1", vec![1.0, 0.0]),
            ("t2", vec![-1.0, 0.0]),
        ]);
        let gateway = gateway_for(&server.url());
        // Anti-parallel vectors would give -1; the floor keeps the score 0.
        assert_eq!(embed_f1("t1", "t2", &gateway).unwrap(), 0.0);
    }

    #[test]
    fn embed_f1_batches_once_per_text() {
        let server = vector_server(vec![
            ("t1", vec![1.0, 0.0]),
            ("t2", vec![0.0, 1.0]),
            ("t3", vec![1.0, 0.0]),
        ]);
        let gateway = gateway_for(&server.url());
        embed_f1("t1 t2", "t3", &gateway).unwrap();
        assert_eq!(server.calls(), 2);
    }

    proptest! {
        #[test]
        fn semantic_scores_are_bounded(
            a in "[abc ]{0,30}",
            b in "[abc ]{0,30}",
        ) {
            let score = bleu(&a, &b);
            prop_assert!((0.0..=100.0).contains(&score), "bleu {score}");
            let score = rouge_l(&a, &b);
            prop_assert!((0.0..=100.0).contains(&score), "rouge {score}");
        }

        #[test]
        fn identity_metrics_are_exact(text in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            prop_assert_eq!(bleu(&text, &text), 100.0);
            prop_assert_eq!(rouge_l(&text, &text), 100.0);
        }

        #[test]
        fn rouge_symmetry(
            a in "[ab ]{1,20}",
            b in "[ab ]{1,20}",
        ) {
            prop_assert_eq!(rouge_l(&a, &b), rouge_l(&b, &a));
        }
    }
}
