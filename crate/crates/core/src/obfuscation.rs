//! Untargeted rewrite attacks: perturb the first document of a same-author
//! trial and measure whether the verifier's accept decision flips to reject.
//!
//! Three strategies ship behind the registry: whole-text prompt rewrites,
//! partial sentence-level paraphrasing with a seeded sentence lottery, and
//! ingestion of perturbations produced by external tools. All three yield
//! plain replacement text; campaign bookkeeping is identical across them.
//!
//! Campaign protocol: only same-author trials enter. A trial whose original
//! pair already scores below threshold is recorded as skipped and stays out
//! of the success-rate denominator. Only the first document is perturbed;
//! the partner document is never touched.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::OperatingPoint;
use crate::campaign::{run_pool, summarize, CampaignOptions, CampaignSummary, FailPolicy};
use crate::corpus::{Corpus, TrialLabel, TrialPair};
use crate::gateway::{Gateway, GatewayError, PromptTemplate, TemplateStore};
use crate::metrics::{
    bleu, embed_f1, rouge_l, MetricsError, OutcomeRecord, RecordStatus, SemanticScores,
};
use crate::verifier::{decide, Scorer, VerifierError, VerifierScore};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidSpec(String),
    #[error("unknown attack kind {0:?}")]
    UnknownKind(String),
    #[error("model returned an empty completion after cleanup")]
    EmptyCompletion,
    #[error("no replacement text recorded for trial {trial_id:?}")]
    MissingPerturbation { trial_id: String },
    #[error("{path} line {line}: duplicate replacement for trial {trial_id:?}")]
    DuplicatePerturbation {
        path: String,
        line: usize,
        trial_id: String,
    },
    #[error("{path}: {message}")]
    PerturbationIo { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    PerturbationParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("trial {trial_id:?}: {source}")]
    AtTrial {
        trial_id: String,
        #[source]
        source: Box<AttackError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Binding value for templates that reference a lexical-diversity
/// definition; kept as data so prompt variants can override it.
pub const DEFAULT_LEXICAL_DIV: &str = "Lexical diversity measures the proportion of unique words in a text; increasing it means drawing on a wider vocabulary with less repetition. This is the";

/// Strips boilerplate that instruction-tuned models wrap around rewrites:
/// one leading "Paraphrased text:" label and one matched pair of surrounding
/// quotes. An empty remainder is an error, not an empty perturbation.
pub fn clean_completion(raw: &str) -> Result<String, AttackError> {
    let mut text = raw.trim();
    let prefix = "paraphrased text:";
    let pairs = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    // Each wrapper peels at most once; the loop tolerates either nesting
    // order (label inside quotes or quotes inside label).
    let mut label_stripped = false;
    let mut quotes_stripped = false;
    loop {
        if !quotes_stripped {
            if let Some(inner) = pairs.iter().find_map(|(open, close)| {
                text.strip_prefix(*open)
                    .and_then(|rest| rest.strip_suffix(*close))
            }) {
                text = inner.trim();
                quotes_stripped = true;
                continue;
            }
        }
        if !label_stripped
            && text.len() >= prefix.len()
            && text[..prefix.len()].eq_ignore_ascii_case(prefix)
        {
            text = text[prefix.len()..].trim_start();
            label_stripped = true;
            continue;
        }
        break;
    }
    let text = text.trim();
    if text.is_empty() {
        return Err(AttackError::EmptyCompletion);
    }
    Ok(text.to_string())
}

/// A text perturbation strategy. Implementations must be deterministic
/// given (trial_id, text) and the gateway transcript.
pub trait Obfuscator: Send + Sync {
    fn name(&self) -> String;
    fn obfuscate(&self, trial_id: &str, text: &str, gateway: &Gateway)
        -> Result<String, AttackError>;
}

// ─────────────────────── whole-text prompt rewrites ───────────────────────

/// Renders one template over the full document and takes the completion.
pub struct PromptAttack {
    template: PromptTemplate,
}

impl PromptAttack {
    pub fn new(template: PromptTemplate) -> Result<Self, AttackError> {
        if !template
            .placeholders()
            .iter()
            .any(|p| p == "target_article")
        {
            return Err(AttackError::InvalidSpec(format!(
                "template {:?} has no {{target_article}} placeholder",
                template.id
            )));
        }
        Ok(PromptAttack { template })
    }
}

impl Obfuscator for PromptAttack {
    fn name(&self) -> String {
        format!("prompt:{}", self.template.id)
    }

    fn obfuscate(
        &self,
        _trial_id: &str,
        text: &str,
        gateway: &Gateway,
    ) -> Result<String, AttackError> {
        let mut bindings = BTreeMap::new();
        bindings.insert("target_article".to_string(), text.to_string());
        bindings.insert("lexical_div".to_string(), DEFAULT_LEXICAL_DIV.to_string());
        let prompt = self.template.render(&bindings)?;
        clean_completion(&gateway.complete(&prompt)?)
    }
}

// ─────────────────────── partial sentence paraphrase ───────────────────────

/// Derives a per-trial stream seed so sentence selection is independent of
/// trial processing order.
fn trial_seed(base: u64, trial_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(trial_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Paraphrases a seeded random subset of sentences and reassembles the text
/// in original order. The subset size is fraction times the sentence count,
/// rounded half up; unselected sentences pass through byte-identical.
pub fn partial_paraphrase(
    text: &str,
    fraction: f64,
    seed: u64,
    gateway: &Gateway,
    template: &PromptTemplate,
) -> Result<String, AttackError> {
    let sentences = crate::corpus::split_sentences(text);
    let n = sentences.len();
    if n == 0 {
        return Ok(text.to_string());
    }
    let k = ((fraction * n as f64) + 0.5).floor() as usize;
    let k = k.min(n);
    if k == 0 {
        return Ok(sentences.join(" "));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let selected: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .collect();

    let mut rebuilt = Vec::with_capacity(n);
    for (i, sentence) in sentences.iter().enumerate() {
        if selected.contains(&i) {
            let mut bindings = BTreeMap::new();
            bindings.insert("sentence".to_string(), sentence.clone());
            let prompt = template.render(&bindings)?;
            rebuilt.push(clean_completion(&gateway.complete(&prompt)?)?);
        } else {
            rebuilt.push(sentence.clone());
        }
    }
    Ok(rebuilt.join(" "))
}

pub struct PartialParaphrase {
    fraction: f64,
    seed: u64,
    template: PromptTemplate,
}

impl PartialParaphrase {
    pub fn new(fraction: f64, seed: u64, template: PromptTemplate) -> Result<Self, AttackError> {
        if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
            return Err(AttackError::InvalidSpec(format!(
                "fraction {fraction} outside [0, 1]"
            )));
        }
        if !template.placeholders().iter().any(|p| p == "sentence") {
            return Err(AttackError::InvalidSpec(format!(
                "template {:?} has no {{sentence}} placeholder",
                template.id
            )));
        }
        Ok(PartialParaphrase {
            fraction,
            seed,
            template,
        })
    }
}

impl Obfuscator for PartialParaphrase {
    fn name(&self) -> String {
        // Display of f64 round-trips, so the fraction can be parsed back out
        // of the campaign name by sweep reports.
        format!("partial:{}", self.fraction)
    }

    fn obfuscate(
        &self,
        trial_id: &str,
        text: &str,
        gateway: &Gateway,
    ) -> Result<String, AttackError> {
        partial_paraphrase(
            text,
            self.fraction,
            trial_seed(self.seed, trial_id),
            gateway,
            &self.template,
        )
    }
}

// ───────────────────── externally produced rewrites ─────────────────────

/// Replacement texts produced outside this harness, keyed by trial. The
/// file is JSONL with objects {"trial_id", "perturbed_text"}.
#[derive(Debug)]
pub struct ExternalPerturbations {
    map: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct PerturbationLine {
    trial_id: String,
    perturbed_text: String,
}

impl ExternalPerturbations {
    pub fn load(path: &Path) -> Result<Self, AttackError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| AttackError::PerturbationIo {
            path: display.clone(),
            message: e.to_string(),
        })?;
        let mut map = BTreeMap::new();
        for (number, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| AttackError::PerturbationIo {
                path: display.clone(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PerturbationLine =
                serde_json::from_str(&line).map_err(|e| AttackError::PerturbationParse {
                    path: display.clone(),
                    line: number + 1,
                    message: e.to_string(),
                })?;
            if map.contains_key(&parsed.trial_id) {
                return Err(AttackError::DuplicatePerturbation {
                    path: display,
                    line: number + 1,
                    trial_id: parsed.trial_id,
                });
            }
            map.insert(parsed.trial_id, parsed.perturbed_text);
        }
        Ok(ExternalPerturbations { map })
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Self {
        ExternalPerturbations { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Obfuscator for ExternalPerturbations {
    fn name(&self) -> String {
        "external".to_string()
    }

    fn obfuscate(
        &self,
        trial_id: &str,
        _text: &str,
        _gateway: &Gateway,
    ) -> Result<String, AttackError> {
        self.map
            .get(trial_id)
            .cloned()
            .ok_or_else(|| AttackError::MissingPerturbation {
                trial_id: trial_id.to_string(),
            })
    }
}

// ───────────────────────────── registry ─────────────────────────────

/// Declarative strategy selection, deserialized from config.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObfuscationSpec {
    Prompt {
        template_id: String,
    },
    Partial {
        fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        inner_template_id: Option<String>,
    },
    External {
        perturbations_path: PathBuf,
    },
}

impl ObfuscationSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObfuscationSpec::Prompt { .. } => "prompt",
            ObfuscationSpec::Partial { .. } => "partial",
            ObfuscationSpec::External { .. } => "external",
        }
    }
}

/// Everything a factory may need to assemble a strategy.
pub struct AttackContext<'a> {
    pub templates: &'a TemplateStore,
    /// Campaign-level seed; specs may override it per attack.
    pub seed: u64,
}

pub type AttackFactory =
    Box<dyn Fn(&ObfuscationSpec, &AttackContext) -> Result<Box<dyn Obfuscator>, AttackError> + Send + Sync>;

/// Maps spec kinds to constructors so strategy variants are selected by
/// name at runtime and tests can slot in custom ones.
pub struct AttackRegistry {
    factories: BTreeMap<String, AttackFactory>,
}

impl AttackRegistry {
    pub fn empty() -> Self {
        AttackRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut registry = AttackRegistry::empty();
        registry.register("prompt", |spec, ctx| match spec {
            ObfuscationSpec::Prompt { template_id } => {
                let template = ctx.templates.get(template_id)?.clone();
                Ok(Box::new(PromptAttack::new(template)?) as Box<dyn Obfuscator>)
            }
            other => Err(AttackError::InvalidSpec(format!(
                "prompt factory got a {} spec",
                other.kind_name()
            ))),
        });
        registry.register("partial", |spec, ctx| match spec {
            ObfuscationSpec::Partial {
                fraction,
                seed,
                inner_template_id,
            } => {
                let template_id = inner_template_id.as_deref().unwrap_or("partial_sentence");
                let template = ctx.templates.get(template_id)?.clone();
                let seed = seed.unwrap_or(ctx.seed);
                Ok(Box::new(PartialParaphrase::new(*fraction, seed, template)?)
                    as Box<dyn Obfuscator>)
            }
            other => Err(AttackError::InvalidSpec(format!(
                "partial factory got a {} spec",
                other.kind_name()
            ))),
        });
        registry.register("external", |spec, _ctx| match spec {
            ObfuscationSpec::External { perturbations_path } => {
                Ok(Box::new(ExternalPerturbations::load(perturbations_path)?)
                    as Box<dyn Obfuscator>)
            }
            other => Err(AttackError::InvalidSpec(format!(
                "external factory got a {} spec",
                other.kind_name()
            ))),
        });
        registry
    }

    pub fn register<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&ObfuscationSpec, &AttackContext) -> Result<Box<dyn Obfuscator>, AttackError>
            + Send
            + Sync
            + 'static,
    {
        self.factories.insert(kind.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn build(
        &self,
        spec: &ObfuscationSpec,
        ctx: &AttackContext,
    ) -> Result<Box<dyn Obfuscator>, AttackError> {
        let factory = self
            .factories
            .get(spec.kind_name())
            .ok_or_else(|| AttackError::UnknownKind(spec.kind_name().to_string()))?;
        factory(spec, ctx)
    }
}

// ───────────────────────────── campaign ─────────────────────────────

/// One trial's outcome. Skipped and failed trials echo the original text
/// and pre-attack score into the post-attack fields, so the flip equation
/// (accept before, reject after) holds for every status.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AttackRecord {
    pub trial_id: String,
    /// Which side of the pair was rewritten; the first document, always.
    pub perturbed_side: String,
    pub status: RecordStatus,
    pub original_text: String,
    pub perturbed_text: String,
    pub pre_score: VerifierScore,
    pub post_score: VerifierScore,
    pub pre_decision: TrialLabel,
    pub post_decision: TrialLabel,
    pub flipped: bool,
    pub semantics: Option<SemanticScores>,
    pub error: Option<String>,
}

impl OutcomeRecord for AttackRecord {
    fn status(&self) -> RecordStatus {
        self.status
    }
    fn flipped(&self) -> bool {
        self.flipped
    }
}

fn echo_record(
    trial_id: &str,
    status: RecordStatus,
    original: &str,
    pre: VerifierScore,
    pre_decision: TrialLabel,
    error: Option<String>,
) -> AttackRecord {
    AttackRecord {
        trial_id: trial_id.to_string(),
        perturbed_side: "A".to_string(),
        status,
        original_text: original.to_string(),
        perturbed_text: original.to_string(),
        pre_score: pre,
        post_score: pre,
        pre_decision,
        post_decision: pre_decision,
        flipped: false,
        semantics: None,
        error,
    }
}

/// Runs the flip campaign over every same-author trial: score the original
/// pair, perturb the first document of correctly accepted pairs, rescore,
/// and record decision flips with semantic-consistency scores.
///
/// Baseline scoring failures abort regardless of policy; failures after the
/// baseline follow the fail policy. Records come back sorted by trial id.
pub fn run_obfuscation_campaign(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    operating_point: &OperatingPoint,
    obfuscator: &dyn Obfuscator,
    gateway: &Gateway,
    options: &CampaignOptions,
) -> Result<(Vec<AttackRecord>, CampaignSummary), AttackError> {
    let eligible: Vec<&TrialPair> = corpus
        .trials()
        .iter()
        .filter(|t| t.label == TrialLabel::SameAuthor)
        .collect();
    let threshold = operating_point.threshold;

    let worker = |index: usize| -> Result<AttackRecord, AttackError> {
        let trial = eligible[index];
        let fail = |source: AttackError| AttackError::AtTrial {
            trial_id: trial.trial_id.clone(),
            source: Box::new(source),
        };
        let doc_a = corpus.document(&trial.doc_a).expect("validated corpus");
        let doc_b = corpus.document(&trial.doc_b).expect("validated corpus");

        // The baseline decides eligibility; a failure here poisons the
        // denominator, so it is fatal under either policy.
        let pre = scorer
            .score_pair(&doc_a.text, &doc_b.text)
            .map_err(|e| fail(e.into()))?;
        let pre_decision = decide(pre, threshold).label;
        if pre_decision != TrialLabel::SameAuthor {
            return Ok(echo_record(
                &trial.trial_id,
                RecordStatus::Skipped,
                &doc_a.text,
                pre,
                pre_decision,
                None,
            ));
        }

        let attacked = || -> Result<AttackRecord, AttackError> {
            let perturbed = obfuscator.obfuscate(&trial.trial_id, &doc_a.text, gateway)?;
            let post = scorer.score_pair(&perturbed, &doc_b.text)?;
            let post_decision = decide(post, threshold).label;
            let semantics = SemanticScores {
                bleu: bleu(&perturbed, &doc_a.text),
                rouge_l: rouge_l(&perturbed, &doc_a.text),
                embed_f1: embed_f1(&perturbed, &doc_a.text, gateway)?,
            };
            Ok(AttackRecord {
                trial_id: trial.trial_id.clone(),
                perturbed_side: "A".to_string(),
                status: RecordStatus::Attacked,
                original_text: doc_a.text.clone(),
                perturbed_text: perturbed,
                pre_score: pre,
                post_score: post,
                pre_decision,
                post_decision,
                flipped: pre_decision == TrialLabel::SameAuthor
                    && post_decision == TrialLabel::DifferentAuthor,
                semantics: Some(semantics),
                error: None,
            })
        };

        match attacked() {
            Ok(record) => Ok(record),
            Err(source) => match options.fail_policy {
                FailPolicy::Continue => Ok(echo_record(
                    &trial.trial_id,
                    RecordStatus::Failed,
                    &doc_a.text,
                    pre,
                    pre_decision,
                    Some(source.to_string()),
                )),
                FailPolicy::Stop => Err(fail(source)),
            },
        }
    };

    let mut records =
        run_pool(eligible.len(), options.parallelism, worker).map_err(|failure| failure.error)?;
    records.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let summary = summarize(&obfuscator.name(), &records, |r| r.semantics)?;
    Ok((records, summary))
}
