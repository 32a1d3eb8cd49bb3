//! Shared campaign machinery: a deterministic bounded worker pool, summary
//! assembly, and the JSONL output format (one record per line, one trailing
//! summary line).
//!
//! Determinism contract: given a pure per-index worker, the output vector
//! depends only on the inputs, never on scheduling. Indices are claimed in
//! ascending order off a shared cursor and results land in per-index slots,
//! so worker count changes throughput but not content. On failure the error
//! with the lowest index is reported, which is the same error every run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    attack_success_rate, MetricsBundle, MetricsError, OutcomeRecord, RecordStatus, SemanticScores,
};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// What to do when one trial's attack or rescoring fails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    /// Abort the campaign on the first failure.
    Stop,
    /// Keep the trial as a failed record and move on.
    #[default]
    Continue,
}

#[derive(Clone, Copy, Debug)]
pub struct CampaignOptions {
    pub parallelism: usize,
    pub fail_policy: FailPolicy,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            parallelism: 1,
            fail_policy: FailPolicy::default(),
        }
    }
}

/// Lowest-index worker failure; deterministic under the ascending claim
/// order, since every lower index was claimed before the failing one.
#[derive(Debug)]
pub struct PoolFailure<E> {
    pub index: usize,
    pub error: E,
}

/// Runs `worker` over indices `0..n` on up to `parallelism` threads.
/// Results come back in index order regardless of scheduling.
pub fn run_pool<R, E, F>(
    n: usize,
    parallelism: usize,
    worker: F,
) -> Result<Vec<R>, PoolFailure<E>>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync,
{
    if n == 0 {
        return Ok(Vec::new());
    }
    let workers = parallelism.clamp(1, n);
    let cursor = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<R, E>>>> = (0..n).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= n {
                    break;
                }
                let result = worker(index);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                *slots[index].lock().expect("slot lock") = Some(result);
            });
        }
    });

    let mut out = Vec::with_capacity(n);
    for (index, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(value)) => out.push(value),
            Some(Err(error)) => return Err(PoolFailure { index, error }),
            // Unclaimed slots sit above the failing index, so the scan
            // returns before ever reaching one.
            None => unreachable!("unclaimed slot below the first failure"),
        }
    }
    Ok(out)
}

/// Trailing summary line of a campaign file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub attack: String,
    pub metrics: MetricsBundle,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: CampaignSummary,
}

/// Builds the summary bundle: success rate over attacked records plus mean
/// semantic scores across them. `semantics` projects a record's scores;
/// records without scores (skipped, failed) do not enter the means.
pub fn summarize<R, F>(
    attack: &str,
    records: &[R],
    semantics: F,
) -> Result<CampaignSummary, MetricsError>
where
    R: OutcomeRecord,
    F: Fn(&R) -> Option<SemanticScores>,
{
    let asr = attack_success_rate(records)?;
    let mut n_flipped = 0;
    let mut n_skipped = 0;
    let mut n_failed = 0;
    let mut n_eligible = 0;
    for record in records {
        match record.status() {
            RecordStatus::Attacked => {
                n_eligible += 1;
                if record.flipped() {
                    n_flipped += 1;
                }
            }
            RecordStatus::Skipped => n_skipped += 1,
            RecordStatus::Failed => n_failed += 1,
        }
    }
    let scored: Vec<SemanticScores> = records.iter().filter_map(&semantics).collect();
    let mean = |pick: fn(&SemanticScores) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(pick).sum::<f64>() / scored.len() as f64
        }
    };
    Ok(CampaignSummary {
        attack: attack.to_string(),
        metrics: MetricsBundle {
            asr,
            bleu: mean(|s| s.bleu),
            rouge_l: mean(|s| s.rouge_l),
            embed_f1: mean(|s| s.embed_f1),
            n_eligible,
            n_flipped,
            n_skipped,
            n_failed,
        },
    })
}

/// Writes records (already in canonical order) then the summary line.
pub fn write_campaign_jsonl<R: Serialize>(
    path: &Path,
    records: &[R],
    summary: &CampaignSummary,
) -> Result<(), CampaignError> {
    let io_err = |e: std::io::Error| CampaignError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| CampaignError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(io_err)?;
    }
    let line = serde_json::to_string(&SummaryLine {
        summary: summary.clone(),
    })
    .map_err(|e| CampaignError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    writeln!(out, "{line}").map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Reads a campaign file back. Records deserialize as `R`; the summary line
/// is recognized by its single `summary` key. Use `serde_json::Value` for
/// `R` when the record shape does not matter.
pub fn read_campaign_jsonl<R: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<R>, Option<CampaignSummary>), CampaignError> {
    let file = File::open(path).map_err(|e| CampaignError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut summary = None;
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CampaignError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CampaignError::Parse {
            path: path.display().to_string(),
            line: number + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let is_summary = value
            .as_object()
            .is_some_and(|map| map.len() == 1 && map.contains_key("summary"));
        if is_summary {
            let parsed: SummaryLine =
                serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            summary = Some(parsed.summary);
        } else {
            let record: R =
                serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            records.push(record);
        }
    }
    Ok((records, summary))
}
