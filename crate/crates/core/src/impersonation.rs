//! Targeted attack: make a source author's text pass as a chosen target
//! author. A retrieval store over the target's documents feeds a two-step
//! prompt pipeline (style summary extraction, then guided rewriting), and
//! the campaign measures reject-to-accept decision flips on different-author
//! trials involving the target.
//!
//! The rewritten side is always the source document; the target's own text
//! is never modified, and pair positions are preserved when rescoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::OperatingPoint;
use crate::campaign::{run_pool, summarize, CampaignOptions, CampaignSummary, FailPolicy};
use crate::corpus::{split_sentences, Corpus, Document, TrialLabel};
use crate::gateway::{EmbeddingVector, Gateway, GatewayError, TemplateStore};
use crate::metrics::{
    bleu, embed_f1, rouge_l, MetricsError, OutcomeRecord, RecordStatus, SemanticScores,
};
use crate::verifier::{decide, Scorer, VerifierError, VerifierScore};

#[derive(Debug, Error)]
pub enum ImpersonationError {
    #[error("style store requires at least one document")]
    EmptyStore,
    #[error("style store got documents by {got:?}, expected {expected:?}")]
    MixedAuthors { expected: String, got: String },
    #[error("retrieval requires k of at least 1")]
    ZeroK,
    #[error("style profile for {author_id:?} has an empty summary")]
    EmptySummary { author_id: String },
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("trial {trial_id:?}: {source}")]
    AtTrial {
        trial_id: String,
        #[source]
        source: Box<ImpersonationError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One target document with its embedding.
#[derive(Clone, Debug)]
pub struct StyleEntry {
    pub doc_id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Embedded corpus of the impersonation target's writing.
#[derive(Clone, Debug)]
pub struct StyleStore {
    author_id: String,
    entries: Vec<StyleEntry>,
}

impl StyleStore {
    pub fn author_id(&self) -> &str {
        &self.author_id
    }

    pub fn entries(&self) -> &[StyleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Embeds every target document in one batched call, preserving order.
pub fn build_style_store(
    target_docs: &[Document],
    gateway: &Gateway,
) -> Result<StyleStore, ImpersonationError> {
    let first = target_docs.first().ok_or(ImpersonationError::EmptyStore)?;
    let author_id = first.author_id.clone();
    for doc in target_docs {
        if doc.author_id != author_id {
            return Err(ImpersonationError::MixedAuthors {
                expected: author_id,
                got: doc.author_id.clone(),
            });
        }
    }
    let texts: Vec<&str> = target_docs.iter().map(|d| d.text.as_str()).collect();
    let vectors = gateway.embed(&texts)?;
    let entries = target_docs
        .iter()
        .zip(vectors)
        .map(|(doc, vector)| StyleEntry {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            vector,
        })
        .collect();
    Ok(StyleStore { author_id, entries })
}

/// Returns up to `k` store entries most similar to the query, cosine
/// descending with doc-id ascending tie breaks. Asking for more entries
/// than exist returns them all.
pub fn retrieve_style_examples<'a>(
    store: &'a StyleStore,
    query: &str,
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<&'a StyleEntry>, ImpersonationError> {
    if k == 0 {
        return Err(ImpersonationError::ZeroK);
    }
    let query_vec = gateway
        .embed(&[query])?
        .into_iter()
        .next()
        .ok_or(ImpersonationError::EmptyStore)?;
    let mut ranked: Vec<&StyleEntry> = store.entries.iter().collect();
    ranked.sort_by(|a, b| {
        query_vec
            .cosine(&b.vector)
            .total_cmp(&query_vec.cosine(&a.vector))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// Extracted target-author style description plus its provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleProfile {
    pub author_id: String,
    pub summary: String,
    pub source_doc_ids: Vec<String>,
    pub k_stories_used: usize,
}

/// Retrieves `k` representative documents and asks the model for a style
/// summary. The retrieval query is the concatenation of each stored
/// document's first sentence, a deterministic stand-in for the store's
/// topical center.
pub fn extract_style(
    store: &StyleStore,
    k: usize,
    gateway: &Gateway,
    templates: &TemplateStore,
) -> Result<StyleProfile, ImpersonationError> {
    if store.is_empty() {
        return Err(ImpersonationError::EmptyStore);
    }
    let query: String = store
        .entries
        .iter()
        .filter_map(|e| split_sentences(&e.text).into_iter().next())
        .collect::<Vec<_>>()
        .join(" ");
    let examples = retrieve_style_examples(store, &query, k, gateway)?;

    let block = examples
        .iter()
        .enumerate()
        .map(|(i, entry)| format!("Story {}:\n{}", i + 1, entry.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let template = templates.get("style_extract")?;
    let mut bindings = BTreeMap::new();
    bindings.insert("examples".to_string(), block);
    let prompt = template.render(&bindings)?;
    let summary = gateway.complete(&prompt)?.trim().to_string();
    if summary.is_empty() {
        return Err(ImpersonationError::EmptyCompletion);
    }
    Ok(StyleProfile {
        author_id: store.author_id.clone(),
        summary,
        source_doc_ids: examples.iter().map(|e| e.doc_id.clone()).collect(),
        k_stories_used: examples.len(),
    })
}

/// Rewrites source text in the profiled style via the rewrite template.
pub fn impersonate(
    profile: &StyleProfile,
    source_text: &str,
    gateway: &Gateway,
    templates: &TemplateStore,
) -> Result<String, ImpersonationError> {
    if profile.summary.trim().is_empty() {
        return Err(ImpersonationError::EmptySummary {
            author_id: profile.author_id.clone(),
        });
    }
    let template = templates.get("style_rewrite")?;
    let mut bindings = BTreeMap::new();
    bindings.insert("style_summary".to_string(), profile.summary.clone());
    bindings.insert("target_article".to_string(), source_text.to_string());
    let prompt = template.render(&bindings)?;
    let raw = gateway.complete(&prompt)?;
    crate::obfuscation::clean_completion(&raw)
        .map_err(|_| ImpersonationError::EmptyCompletion)
}

/// One rewrite job handed to a strategy.
pub struct RewriteRequest<'a> {
    pub trial_id: &'a str,
    pub source_text: &'a str,
    pub profile: &'a StyleProfile,
}

/// Source-text rewriting strategy; the campaign is generic over it so
/// deterministic stand-ins can replace the prompt pipeline.
pub trait Rewriter: Send + Sync {
    fn name(&self) -> String;
    fn rewrite(
        &self,
        request: &RewriteRequest,
        gateway: &Gateway,
    ) -> Result<String, ImpersonationError>;
}

/// Production rewriter: the extracted profile drives the rewrite prompt.
pub struct ProfileRewriter {
    templates: TemplateStore,
}

impl ProfileRewriter {
    pub fn new(templates: TemplateStore) -> Self {
        ProfileRewriter { templates }
    }
}

impl Rewriter for ProfileRewriter {
    fn name(&self) -> String {
        "style_profile".to_string()
    }

    fn rewrite(
        &self,
        request: &RewriteRequest,
        gateway: &Gateway,
    ) -> Result<String, ImpersonationError> {
        impersonate(request.profile, request.source_text, gateway, &self.templates)
    }
}

/// One trial's outcome; the flip direction is reject before, accept after.
/// Echo semantics for skipped and failed trials mirror the untargeted
/// campaign.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImpersonationRecord {
    pub trial_id: String,
    pub source_author_id: String,
    pub status: RecordStatus,
    pub original_text: String,
    pub rewritten_text: String,
    pub pre_score: VerifierScore,
    pub post_score: VerifierScore,
    pub pre_decision: TrialLabel,
    pub post_decision: TrialLabel,
    pub flipped: bool,
    pub semantics: Option<SemanticScores>,
    pub error: Option<String>,
}

impl OutcomeRecord for ImpersonationRecord {
    fn status(&self) -> RecordStatus {
        self.status
    }
    fn flipped(&self) -> bool {
        self.flipped
    }
}

fn echo_record(
    trial_id: &str,
    source_author_id: &str,
    status: RecordStatus,
    original: &str,
    pre: VerifierScore,
    pre_decision: TrialLabel,
    error: Option<String>,
) -> ImpersonationRecord {
    ImpersonationRecord {
        trial_id: trial_id.to_string(),
        source_author_id: source_author_id.to_string(),
        status,
        original_text: original.to_string(),
        rewritten_text: original.to_string(),
        pre_score: pre,
        post_score: pre,
        pre_decision,
        post_decision: pre_decision,
        flipped: false,
        semantics: None,
        error,
    }
}

/// Campaign over every different-author trial with the target on exactly
/// one side: score the original pair, rewrite the source side of correctly
/// rejected pairs, rescore in place, and record flips to acceptance.
pub fn run_impersonation_campaign(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    operating_point: &OperatingPoint,
    profile: &StyleProfile,
    gateway: &Gateway,
    templates: &TemplateStore,
    options: &CampaignOptions,
) -> Result<(Vec<ImpersonationRecord>, CampaignSummary), ImpersonationError> {
    let rewriter = ProfileRewriter::new(templates.clone());
    run_impersonation_campaign_with(corpus, scorer, operating_point, profile, &rewriter, gateway, options)
}

/// As `run_impersonation_campaign` but with an explicit rewrite strategy.
pub fn run_impersonation_campaign_with(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    operating_point: &OperatingPoint,
    profile: &StyleProfile,
    rewriter: &dyn Rewriter,
    gateway: &Gateway,
    options: &CampaignOptions,
) -> Result<(Vec<ImpersonationRecord>, CampaignSummary), ImpersonationError> {
    let target = profile.author_id.as_str();
    // Eligible pairs put the target on exactly one side; the other side is
    // the source document to rewrite.
    struct Job<'a> {
        trial_id: &'a str,
        target_text: &'a str,
        source_text: &'a str,
        source_author: &'a str,
        source_is_a: bool,
    }
    let jobs: Vec<Job> = corpus
        .trials()
        .iter()
        .filter(|t| t.label == TrialLabel::DifferentAuthor)
        .filter_map(|t| {
            let doc_a = corpus.document(&t.doc_a).expect("validated corpus");
            let doc_b = corpus.document(&t.doc_b).expect("validated corpus");
            let a_is_target = doc_a.author_id == target;
            let b_is_target = doc_b.author_id == target;
            match (a_is_target, b_is_target) {
                (true, false) => Some(Job {
                    trial_id: &t.trial_id,
                    target_text: &doc_a.text,
                    source_text: &doc_b.text,
                    source_author: &doc_b.author_id,
                    source_is_a: false,
                }),
                (false, true) => Some(Job {
                    trial_id: &t.trial_id,
                    target_text: &doc_b.text,
                    source_text: &doc_a.text,
                    source_author: &doc_a.author_id,
                    source_is_a: true,
                }),
                _ => None,
            }
        })
        .collect();
    let threshold = operating_point.threshold;

    let worker = |index: usize| -> Result<ImpersonationRecord, ImpersonationError> {
        let job = &jobs[index];
        let fail = |source: ImpersonationError| ImpersonationError::AtTrial {
            trial_id: job.trial_id.to_string(),
            source: Box::new(source),
        };
        let score_in_place = |source_side: &str| {
            if job.source_is_a {
                scorer.score_pair(source_side, job.target_text)
            } else {
                scorer.score_pair(job.target_text, source_side)
            }
        };

        let pre = score_in_place(job.source_text).map_err(|e| fail(e.into()))?;
        let pre_decision = decide(pre, threshold).label;
        if pre_decision != TrialLabel::DifferentAuthor {
            return Ok(echo_record(
                job.trial_id,
                job.source_author,
                RecordStatus::Skipped,
                job.source_text,
                pre,
                pre_decision,
                None,
            ));
        }

        let attacked = || -> Result<ImpersonationRecord, ImpersonationError> {
            let request = RewriteRequest {
                trial_id: job.trial_id,
                source_text: job.source_text,
                profile,
            };
            let rewritten = rewriter.rewrite(&request, gateway)?;
            let post = score_in_place(&rewritten)?;
            let post_decision = decide(post, threshold).label;
            let semantics = SemanticScores {
                bleu: bleu(&rewritten, job.source_text),
                rouge_l: rouge_l(&rewritten, job.source_text),
                embed_f1: embed_f1(&rewritten, job.source_text, gateway)?,
            };
            Ok(ImpersonationRecord {
                trial_id: job.trial_id.to_string(),
                source_author_id: job.source_author.to_string(),
                status: RecordStatus::Attacked,
                original_text: job.source_text.to_string(),
                rewritten_text: rewritten,
                pre_score: pre,
                post_score: post,
                pre_decision,
                post_decision,
                flipped: pre_decision == TrialLabel::DifferentAuthor
                    && post_decision == TrialLabel::SameAuthor,
                semantics: Some(semantics),
                error: None,
            })
        };

        match attacked() {
            Ok(record) => Ok(record),
            Err(source) => match options.fail_policy {
                FailPolicy::Continue => Ok(echo_record(
                    job.trial_id,
                    job.source_author,
                    RecordStatus::Failed,
                    job.source_text,
                    pre,
                    pre_decision,
                    Some(source.to_string()),
                )),
                FailPolicy::Stop => Err(fail(source)),
            },
        }
    };

    let mut records =
        run_pool(jobs.len(), options.parallelism, worker).map_err(|failure| failure.error)?;
    records.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let name = format!(
        "impersonation:{}:k{}",
        profile.author_id, profile.k_stories_used
    );
    let summary = summarize(&name, &records, |r| r.semantics)?;
    Ok((records, summary))
}

/// One sweep point: the profile built with that story count and the
/// campaign it produced.
pub struct SweepPoint {
    pub profile: StyleProfile,
    pub records: Vec<ImpersonationRecord>,
    pub summary: CampaignSummary,
}

/// Reruns profile extraction and the campaign per requested in-context
/// story count. Counts above the store size clamp to it (with a warning);
/// duplicate effective counts run once.
#[allow(clippy::too_many_arguments)]
pub fn story_count_sweep(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    operating_point: &OperatingPoint,
    store: &StyleStore,
    ks: &[usize],
    gateway: &Gateway,
    templates: &TemplateStore,
    options: &CampaignOptions,
) -> Result<BTreeMap<usize, SweepPoint>, ImpersonationError> {
    let mut effective = BTreeSet::new();
    for &k in ks {
        if k == 0 {
            return Err(ImpersonationError::ZeroK);
        }
        if k > store.len() {
            log::warn!(
                "story count {k} exceeds the {} stored documents; clamping",
                store.len()
            );
            effective.insert(store.len());
        } else {
            effective.insert(k);
        }
    }
    let mut out = BTreeMap::new();
    for k in effective {
        let profile = extract_style(store, k, gateway, templates)?;
        let (records, summary) = run_impersonation_campaign(
            corpus,
            scorer,
            operating_point,
            &profile,
            gateway,
            templates,
            options,
        )?;
        out.insert(
            k,
            SweepPoint {
                profile,
                records,
                summary,
            },
        );
    }
    Ok(out)
}
