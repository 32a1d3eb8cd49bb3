//! Trial corpora: documents, labeled verification trials, sentence
//! segmentation, and token-budget truncation.
//!
//! A corpus is loaded from two JSONL files. `documents.jsonl` carries one
//! document per line with `doc_id`, `author_id`, `text`, and an optional
//! `domain_tag`. `trials.jsonl` carries one trial per line with `trial_id`,
//! `doc_a`, `doc_b`, and a `label` of `same_author` or `different_author`.
//! Loading validates referential integrity and label consistency up front so
//! downstream stages never see a dangling document id or a mislabeled pair.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tokens are whitespace-delimited throughout the harness; every budget and
/// count in this module uses this definition.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id {doc_id:?}")]
    DuplicateDoc { doc_id: String },
    #[error("duplicate trial_id {trial_id:?}")]
    DuplicateTrial { trial_id: String },
    #[error("document {doc_id:?} has empty text")]
    EmptyText { doc_id: String },
    #[error("trial {trial_id:?} references unknown document {doc_id:?}")]
    DanglingDoc { trial_id: String, doc_id: String },
    #[error("trial {trial_id:?} pairs document {doc_id:?} with itself")]
    SelfPair { trial_id: String, doc_id: String },
    #[error(
        "trial {trial_id:?} is labeled {label:?} but its documents are by \
         {author_a:?} and {author_b:?}"
    )]
    LabelMismatch {
        trial_id: String,
        label: TrialLabel,
        author_a: String,
        author_b: String,
    },
}

/// Ground-truth label of a trial pair, and also the verdict type emitted by
/// the decision rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLabel {
    SameAuthor,
    DifferentAuthor,
}

/// One text with known authorship. `token_count` is computed at load time and
/// kept in sync by [`Corpus::truncate_documents`].
#[derive(Clone, Debug)]
pub struct Document {
    pub doc_id: String,
    pub author_id: String,
    pub text: String,
    pub domain_tag: Option<String>,
    pub token_count: usize,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        author_id: impl Into<String>,
        text: impl Into<String>,
        domain_tag: Option<String>,
    ) -> Self {
        let text = text.into();
        let token_count = count_tokens(&text);
        Document {
            doc_id: doc_id.into(),
            author_id: author_id.into(),
            text,
            domain_tag,
            token_count,
        }
    }
}

/// A single verification trial: compare the texts behind `doc_a` and `doc_b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialPair {
    pub trial_id: String,
    pub doc_a: String,
    pub doc_b: String,
    pub label: TrialLabel,
}

/// Validated in-memory corpus. Documents are keyed by id; the author index
/// maps each author to their doc ids in sorted order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    trials: Vec<TrialPair>,
    authors: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    /// Builds a corpus from parts, enforcing every invariant the JSONL loader
    /// enforces. Test fixtures go through here too, so there is a single
    /// validation path.
    pub fn from_parts(
        documents: Vec<Document>,
        trials: Vec<TrialPair>,
    ) -> Result<Self, CorpusError> {
        let mut doc_map = BTreeMap::new();
        let mut authors: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for doc in documents {
            if doc.text.is_empty() {
                return Err(CorpusError::EmptyText { doc_id: doc.doc_id });
            }
            if doc_map.contains_key(&doc.doc_id) {
                return Err(CorpusError::DuplicateDoc { doc_id: doc.doc_id });
            }
            authors
                .entry(doc.author_id.clone())
                .or_default()
                .push(doc.doc_id.clone());
            doc_map.insert(doc.doc_id.clone(), doc);
        }
        for ids in authors.values_mut() {
            ids.sort();
        }

        let mut seen_trials = BTreeMap::new();
        for trial in &trials {
            if seen_trials.insert(trial.trial_id.clone(), ()).is_some() {
                return Err(CorpusError::DuplicateTrial {
                    trial_id: trial.trial_id.clone(),
                });
            }
            if trial.doc_a == trial.doc_b {
                return Err(CorpusError::SelfPair {
                    trial_id: trial.trial_id.clone(),
                    doc_id: trial.doc_a.clone(),
                });
            }
            for doc_id in [&trial.doc_a, &trial.doc_b] {
                if !doc_map.contains_key(doc_id) {
                    return Err(CorpusError::DanglingDoc {
                        trial_id: trial.trial_id.clone(),
                        doc_id: doc_id.clone(),
                    });
                }
            }
            let author_a = &doc_map[&trial.doc_a].author_id;
            let author_b = &doc_map[&trial.doc_b].author_id;
            let consistent = match trial.label {
                TrialLabel::SameAuthor => author_a == author_b,
                TrialLabel::DifferentAuthor => author_a != author_b,
            };
            if !consistent {
                return Err(CorpusError::LabelMismatch {
                    trial_id: trial.trial_id.clone(),
                    label: trial.label,
                    author_a: author_a.clone(),
                    author_b: author_b.clone(),
                });
            }
        }

        Ok(Corpus {
            documents: doc_map,
            trials,
            authors,
        })
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn n_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn trials(&self) -> &[TrialPair] {
        &self.trials
    }

    pub fn authors(&self) -> impl Iterator<Item = &str> {
        self.authors.keys().map(String::as_str)
    }

    /// Doc ids for one author, sorted ascending. Empty for unknown authors.
    pub fn docs_by_author(&self, author_id: &str) -> &[String] {
        self.authors
            .get(author_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Resolves a trial to its two texts. Referential integrity is checked at
    /// construction, so this cannot fail for trials owned by this corpus.
    pub fn trial_texts(&self, trial: &TrialPair) -> (&str, &str) {
        (
            self.documents[&trial.doc_a].text.as_str(),
            self.documents[&trial.doc_b].text.as_str(),
        )
    }

    /// Applies [`truncate_to_tokens`] to every document and recomputes token
    /// counts. Used to equalize document lengths before scoring.
    pub fn truncate_documents(&mut self, budget: usize) {
        for doc in self.documents.values_mut() {
            doc.text = truncate_to_tokens(&doc.text, budget);
            doc.token_count = count_tokens(&doc.text);
        }
    }
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    author_id: String,
    text: String,
    #[serde(default)]
    domain_tag: Option<String>,
}

#[derive(Deserialize)]
struct RawTrial {
    trial_id: String,
    doc_a: String,
    doc_b: String,
    label: TrialLabel,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads and validates a corpus from the two JSONL files.
pub fn load_corpus(documents_path: &Path, trials_path: &Path) -> Result<Corpus, CorpusError> {
    let docs: Vec<RawDocument> = read_jsonl(documents_path)?;
    let trials: Vec<RawTrial> = read_jsonl(trials_path)?;
    let documents = docs
        .into_iter()
        .map(|d| Document::new(d.doc_id, d.author_id, d.text, d.domain_tag))
        .collect();
    let trials = trials
        .into_iter()
        .map(|t| TrialPair {
            trial_id: t.trial_id,
            doc_a: t.doc_a,
            doc_b: t.doc_b,
            label: t.label,
        })
        .collect();
    Corpus::from_parts(documents, trials)
}

// ───────────────────────── sentence segmentation ─────────────────────────

/// Words that end in a period without ending a sentence. Compared
/// case-insensitively against the whole whitespace-delimited word.
const ABBREVIATIONS: &[&str] = &["Mr.", "Mrs.", "Dr.", "St.", "vs.", "e.g.", "i.e."];

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}')
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

/// True when the word ending at `chars[..=end]` (inclusive) is a known
/// abbreviation.
fn ends_with_abbreviation(chars: &[char]) -> bool {
    let word_start = chars
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|i| i + 1)
        .unwrap_or(0);
    let word: String = chars[word_start..].iter().collect();
    ABBREVIATIONS
        .iter()
        .any(|abbr| abbr.eq_ignore_ascii_case(&word))
}

/// Splits text into sentences on `.`, `?`, or `!` runs followed by whitespace
/// and an uppercase letter or opening quote, skipping boundaries after known
/// abbreviations. Whitespace is normalized to single spaces first, so joining
/// the returned sentences with single spaces yields exactly the same token
/// sequence as the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = normalized.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i;
        while end + 1 < chars.len() && is_terminal(chars[end + 1]) {
            end += 1;
        }
        let boundary = end + 2 < chars.len()
            && chars[end + 1] == ' '
            && (chars[end + 2].is_uppercase() || is_quote(chars[end + 2]))
            && !ends_with_abbreviation(&chars[start..=end]);
        if boundary {
            sentences.push(chars[start..=end].iter().collect());
            start = end + 2;
            i = start;
        } else {
            i = end + 1;
        }
    }
    if start < chars.len() {
        sentences.push(chars[start..].iter().collect());
    }
    sentences
}

/// Keeps whole leading sentences while the total stays within `budget`
/// whitespace tokens. If even the first sentence exceeds the budget it is
/// returned intact rather than cut mid-sentence.
pub fn truncate_to_tokens(text: &str, budget: usize) -> String {
    assert!(budget >= 1, "token budget must be at least 1");
    let sentences = split_sentences(text);
    let mut kept: Vec<&str> = Vec::new();
    let mut total = 0;
    for sentence in &sentences {
        let tokens = count_tokens(sentence);
        if total + tokens > budget {
            break;
        }
        kept.push(sentence);
        total += tokens;
    }
    if kept.is_empty() {
        return sentences.into_iter().next().unwrap_or_default();
    }
    kept.join(" ")
}
