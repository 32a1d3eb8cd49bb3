//! Declarative run configuration. One TOML file names the corpus, the
//! scorer, the gateway, and the attack strategies; command-line flags can
//! override the handful of knobs that vary between invocations of the same
//! experiment (mode, seed, parallelism, fail policy).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use averse_core::campaign::FailPolicy;
use averse_core::gateway::{GatewayConfig, GatewayMode};
use averse_core::obfuscation::ObfuscationSpec;
use averse_core::verifier::ScorerSpec;

use crate::error::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub documents: PathBuf,
    pub trials: PathBuf,
    /// Whitespace-token budget applied to every document after loading.
    #[serde(default)]
    pub truncate_tokens: Option<usize>,
}

/// How many stored documents feed the style profile: a fixed count or
/// every document the target author has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoryCount {
    All,
    Count(usize),
}

impl<'de> Deserialize<'de> for StoryCount {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(0) => Err(serde::de::Error::custom("k_stories must be at least 1")),
            Raw::Number(n) => Ok(StoryCount::Count(n as usize)),
            Raw::Text(s) if s == "all" => Ok(StoryCount::All),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "k_stories must be a positive integer or \"all\", got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpersonationSection {
    pub target_author: String,
    pub k_stories: StoryCount,
}

fn default_parallelism() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub fail_policy: FailPolicy,
    /// Overrides the built-in prompt templates when set.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub scorer: ScorerSpec,
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub attack: Option<ObfuscationSpec>,
    #[serde(default)]
    pub impersonation: Option<ImpersonationSection>,
    pub run: RunSection,
}

/// Per-invocation overrides, already parsed from flags.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub mode: Option<GatewayMode>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub fail_policy: Option<FailPolicy>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: RunConfig = toml::from_str(&raw)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if let Some(mode) = overrides.mode {
            config.gateway.mode = mode;
        }
        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        if let Some(parallelism) = overrides.parallelism {
            config.run.parallelism = parallelism;
        }
        if let Some(policy) = overrides.fail_policy {
            config.run.fail_policy = policy;
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks everything checkable without touching the network: scorer
    /// and attack shapes, file existence, positive knobs.
    pub fn validate(&self) -> Result<(), CliError> {
        require_file(&self.corpus.documents, "corpus.documents")?;
        require_file(&self.corpus.trials, "corpus.trials")?;
        if self.corpus.truncate_tokens == Some(0) {
            return Err(CliError::usage("corpus.truncate_tokens must be at least 1"));
        }
        self.scorer.validate().map_err(CliError::from)?;
        self.gateway.validate().map_err(CliError::from)?;
        if self.gateway.mode == GatewayMode::Replay {
            if let Some(path) = &self.gateway.transcript_path {
                require_file(path, "gateway.transcript_path")?;
            }
        }
        if let Some(ObfuscationSpec::External { perturbations_path }) = &self.attack {
            require_file(perturbations_path, "attack.perturbations_path")?;
        }
        if let Some(ObfuscationSpec::Partial { fraction, .. }) = &self.attack {
            if !(0.0..=1.0).contains(fraction) {
                return Err(CliError::usage(format!(
                    "attack.fraction {fraction} is outside [0, 1]"
                )));
            }
        }
        if let Some(dir) = &self.run.templates_dir {
            if !dir.is_dir() {
                return Err(CliError::usage(format!(
                    "run.templates_dir {} is not a directory",
                    dir.display()
                )));
            }
        }
        if self.run.parallelism == 0 {
            return Err(CliError::usage("run.parallelism must be at least 1"));
        }
        Ok(())
    }
}

fn require_file(path: &Path, field: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{field} {} does not exist",
            path.display()
        )))
    }
}
