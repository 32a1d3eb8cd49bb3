//! Command-line front end for the robustness harness. The binary stays a
//! thin shell: flag parsing and dispatch live here so integration tests can
//! drive the same paths.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use averse_core::campaign::FailPolicy;
use averse_core::gateway::GatewayMode;

pub mod commands;
pub mod config;
pub mod error;

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Live,
    Record,
    Replay,
}

impl From<ModeArg> for GatewayMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Live => GatewayMode::Live,
            ModeArg::Record => GatewayMode::Record,
            ModeArg::Replay => GatewayMode::Replay,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FailPolicyArg {
    Stop,
    Continue,
}

impl From<FailPolicyArg> for FailPolicy {
    fn from(policy: FailPolicyArg) -> Self {
        match policy {
            FailPolicyArg::Stop => FailPolicy::Stop,
            FailPolicyArg::Continue => FailPolicy::Continue,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "averse",
    version,
    about = "Adversarial robustness harness for authorship verification"
)]
pub struct Cli {
    /// Run configuration (TOML). Required by every subcommand except report.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Gateway mode override.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,

    /// Seed override for all stochastic choices.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker count override for campaign scoring.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,

    /// What to do when one trial's attack fails.
    #[arg(long, global = true, value_enum)]
    pub fail_policy: Option<FailPolicyArg>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every trial and fix the decision threshold at the error-rate
    /// crossing. Writes det.csv, scores.jsonl, and operating_point.json.
    Calibrate,
    /// Run the configured obfuscation attack over same-author trials.
    Attack,
    /// Build a style profile for the configured target author and rewrite
    /// different-author trials toward it.
    Impersonate,
    /// Rerun a campaign over a parameter grid and emit an (x, asr) series.
    Sweep {
        /// Comma-separated rewrite fractions, each in [0, 1].
        #[arg(long)]
        fractions: Option<String>,
        /// Comma-separated in-context story counts (integers or "all").
        #[arg(long)]
        story_counts: Option<String>,
    },
    /// Render campaign or calibration outputs into tables and plot data.
    Report {
        /// results-table, asr-density, det-export, or ablation-sweep.
        #[arg(long)]
        kind: String,
        /// csv, json, markdown, or svg-lines.
        #[arg(long)]
        format: String,
        /// Histogram resolution for asr-density.
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Campaign or score files to read.
        inputs: Vec<PathBuf>,
    },
    /// Score one document pair and report the decision, for debugging.
    Score { text_a: PathBuf, text_b: PathBuf },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode.map(GatewayMode::from),
            seed: self.seed,
            parallelism: self.parallelism,
            fail_policy: self.fail_policy.map(FailPolicy::from),
        }
    }

    fn load_config(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::usage("--config is required for this command"))?;
        RunConfig::load(path, &self.overrides())
    }

    /// Dispatches the parsed invocation. The error carries the exit code.
    pub fn run(&self) -> Result<(), CliError> {
        match &self.command {
            Command::Calibrate => commands::cmd_calibrate(&self.load_config()?),
            Command::Attack => commands::cmd_attack(&self.load_config()?),
            Command::Impersonate => commands::cmd_impersonate(&self.load_config()?),
            Command::Sweep {
                fractions,
                story_counts,
            } => commands::cmd_sweep(
                &self.load_config()?,
                fractions.as_deref(),
                story_counts.as_deref(),
            ),
            Command::Report {
                kind,
                format,
                bins,
                output,
                inputs,
            } => commands::cmd_report(kind, format, *bins, inputs, output.as_deref()),
            Command::Score { text_a, text_b } => {
                commands::cmd_score(&self.load_config()?, text_a, text_b)
            }
        }
    }
}
