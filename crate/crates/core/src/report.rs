//! Renders campaign outputs into shareable shapes: per-attack results
//! tables, success-rate density histograms, DET curve exports on probit
//! axes, and fraction-vs-success ablation series.
//!
//! Inputs are the campaign JSONL files; nothing here recomputes scores
//! except the per-author recount inside the density report. The svg-lines
//! format is plotting-tool fodder: one polyline per line of output, written
//! as `label<TAB>x,y x,y ...`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{probit_clamped, CalibrationError, DetCurve};
use crate::campaign::{read_campaign_jsonl, CampaignError, CampaignSummary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report needs at least one input file")]
    NoInputs,
    #[error("{path}: campaign file has no trailing summary line")]
    MissingSummary { path: String },
    #[error("no group contains an attacked record")]
    EmptyGroups,
    #[error("density needs at least one bin")]
    ZeroBins,
    #[error("campaign name {name:?} does not carry a fraction (expected partial:<fraction>)")]
    BadAttackName { name: String },
    #[error("two campaigns share fraction {fraction}")]
    DuplicateFraction { fraction: f64 },
    #[error("{kind} has no {format} rendering")]
    UnsupportedFormat { kind: String, format: String },
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    ResultsTable,
    AsrDensity,
    DetExport,
    AblationSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
    SvgLines,
}

impl ReportFormat {
    fn label(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "markdown",
            ReportFormat::SvgLines => "svg-lines",
        }
    }
}

fn unsupported(kind: &str, format: ReportFormat) -> ReportError {
    ReportError::UnsupportedFormat {
        kind: kind.to_string(),
        format: format.label().to_string(),
    }
}

// ───────────────────────────── results table ─────────────────────────────

/// One campaign's summary row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub attack: String,
    pub asr: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub embed_f1: f64,
    pub n_eligible: usize,
}

fn summary_of(path: &Path) -> Result<CampaignSummary, ReportError> {
    let (_, summary) = read_campaign_jsonl::<serde_json::Value>(path)?;
    summary.ok_or_else(|| ReportError::MissingSummary {
        path: path.display().to_string(),
    })
}

/// Collects one row per campaign file, sorted by attack name.
pub fn results_table(paths: &[PathBuf]) -> Result<Vec<TableRow>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    let mut rows = Vec::new();
    for path in paths {
        let summary = summary_of(path)?;
        let m = summary.metrics;
        rows.push(TableRow {
            attack: summary.attack,
            asr: m.asr,
            bleu: m.bleu,
            rouge_l: m.rouge_l,
            embed_f1: m.embed_f1,
            n_eligible: m.n_eligible,
        });
    }
    rows.sort_by(|a, b| a.attack.cmp(&b.attack));
    Ok(rows)
}

/// Success rates print with two decimals, semantic scores with one.
pub fn render_results_table(
    rows: &[TableRow],
    format: ReportFormat,
) -> Result<String, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("attack,asr,bleu,rouge_l,embed_f1,n_eligible\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{:.2},{:.1},{:.1},{:.1},{}\n",
                    r.attack, r.asr, r.bleu, r.rouge_l, r.embed_f1, r.n_eligible
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| attack | asr | bleu | rouge_l | embed_f1 | n_eligible |\n|---|---|---|---|---|---|\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "| {} | {:.2} | {:.1} | {:.1} | {:.1} | {} |\n",
                    r.attack, r.asr, r.bleu, r.rouge_l, r.embed_f1, r.n_eligible
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            Ok(serde_json::to_string_pretty(rows).expect("rows serialize") + "\n")
        }
        other => Err(unsupported("results-table", other)),
    }
}

// ───────────────────────────── density ─────────────────────────────

pub const DEFAULT_DENSITY_BINS: usize = 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Per-group success rates feeding the density plot. A single campaign
/// file whose records carry source authors is recounted per author; any
/// other input contributes its summary rate as one group.
pub fn asr_groups(paths: &[PathBuf]) -> Result<Vec<(String, f64)>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    if paths.len() == 1 {
        let (records, summary) = read_campaign_jsonl::<serde_json::Value>(&paths[0])?;
        let mut per_author: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for record in &records {
            let Some(author) = record.get("source_author_id").and_then(|v| v.as_str()) else {
                continue;
            };
            if record.get("status").and_then(|v| v.as_str()) != Some("attacked") {
                continue;
            }
            let entry = per_author.entry(author.to_string()).or_insert((0, 0));
            entry.0 += 1;
            if record.get("flipped").and_then(|v| v.as_bool()) == Some(true) {
                entry.1 += 1;
            }
        }
        if !per_author.is_empty() {
            return Ok(per_author
                .into_iter()
                .map(|(author, (eligible, flipped))| {
                    (author, flipped as f64 / eligible as f64)
                })
                .collect());
        }
        let summary = summary.ok_or_else(|| ReportError::MissingSummary {
            path: paths[0].display().to_string(),
        })?;
        if summary.metrics.n_eligible == 0 {
            return Err(ReportError::EmptyGroups);
        }
        return Ok(vec![(summary.attack, summary.metrics.asr)]);
    }
    let mut groups = Vec::new();
    for path in paths {
        let summary = summary_of(path)?;
        groups.push((summary.attack.clone(), summary.metrics.asr));
    }
    Ok(groups)
}

/// Fixed-width histogram over [0, 1]. Every bin is half-open on the right
/// except the last, which also takes 1.0. Densities sum to 1.
pub fn asr_density(values: &[f64], bins: usize) -> Result<Vec<DensityBin>, ReportError> {
    if bins == 0 {
        return Err(ReportError::ZeroBins);
    }
    if values.is_empty() {
        return Err(ReportError::EmptyGroups);
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let clamped = v.clamp(0.0, 1.0);
        let index = ((clamped * bins as f64).floor() as usize).min(bins - 1);
        counts[index] += 1;
    }
    let total = values.len() as f64;
    let width = 1.0 / bins as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| DensityBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count,
            density: count as f64 / total,
        })
        .collect())
}

pub fn render_density(bins: &[DensityBin], format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("bin_lo,bin_hi,count,density\n");
            for b in bins {
                out.push_str(&format!(
                    "{:.6},{:.6},{},{:.6}\n",
                    b.lo, b.hi, b.count, b.density
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out =
                String::from("| bin_lo | bin_hi | count | density |\n|---|---|---|---|\n");
            for b in bins {
                out.push_str(&format!(
                    "| {:.3} | {:.3} | {} | {:.3} |\n",
                    b.lo, b.hi, b.count, b.density
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            Ok(serde_json::to_string_pretty(bins).expect("bins serialize") + "\n")
        }
        ReportFormat::SvgLines => {
            let points = bins
                .iter()
                .map(|b| format!("{},{}", (b.lo + b.hi) / 2.0, b.density))
                .collect::<Vec<_>>()
                .join(" ");
            Ok(format!("asr_density\t{points}\n"))
        }
    }
}

// ───────────────────────────── DET export ─────────────────────────────

/// Multi-curve export with raw and probit-transformed error rates. The
/// svg-lines form plots each curve as probit(far) against probit(frr).
pub fn det_export(
    curves: &[(String, DetCurve)],
    format: ReportFormat,
) -> Result<String, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::NoInputs);
    }
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("label,threshold,frr,far,probit_frr,probit_far\n");
            for (label, curve) in curves {
                for p in &curve.points {
                    out.push_str(&format!(
                        "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                        label,
                        p.threshold,
                        p.frr,
                        p.far,
                        probit_clamped(p.frr),
                        probit_clamped(p.far)
                    ));
                }
            }
            Ok(out)
        }
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct Named<'a> {
                label: &'a str,
                curve: &'a DetCurve,
            }
            let named: Vec<Named> = curves
                .iter()
                .map(|(label, curve)| Named { label, curve })
                .collect();
            Ok(serde_json::to_string_pretty(&named).expect("curves serialize") + "\n")
        }
        ReportFormat::SvgLines => {
            let mut out = String::new();
            for (label, curve) in curves {
                let points = curve
                    .points
                    .iter()
                    .map(|p| format!("{},{}", probit_clamped(p.far), probit_clamped(p.frr)))
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push_str(&format!("{label}\t{points}\n"));
            }
            Ok(out)
        }
        other => Err(unsupported("det-export", other)),
    }
}

// ───────────────────────────── ablation sweep ─────────────────────────────

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AblationPoint {
    pub fraction: f64,
    pub asr: f64,
}

/// Assembles the fraction-vs-success series from partial-paraphrase
/// campaign files, sorted by fraction. The fraction rides in the campaign
/// name, written there by the partial strategy with round-tripping float
/// formatting.
pub fn ablation_series(paths: &[PathBuf]) -> Result<Vec<AblationPoint>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    let mut series = Vec::new();
    for path in paths {
        let summary = summary_of(path)?;
        let fraction = summary
            .attack
            .strip_prefix("partial:")
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| ReportError::BadAttackName {
                name: summary.attack.clone(),
            })?;
        if series.iter().any(|p: &AblationPoint| p.fraction == fraction) {
            return Err(ReportError::DuplicateFraction { fraction });
        }
        series.push(AblationPoint {
            fraction,
            asr: summary.metrics.asr,
        });
    }
    series.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    Ok(series)
}

pub fn render_ablation(
    series: &[AblationPoint],
    format: ReportFormat,
) -> Result<String, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("fraction,asr\n");
            for p in series {
                out.push_str(&format!("{},{}\n", p.fraction, p.asr));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| fraction | asr |\n|---|---|\n");
            for p in series {
                out.push_str(&format!("| {} | {:.2} |\n", p.fraction, p.asr));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            Ok(serde_json::to_string_pretty(series).expect("series serialize") + "\n")
        }
        ReportFormat::SvgLines => {
            let points = series
                .iter()
                .map(|p| format!("{},{}", p.fraction, p.asr))
                .collect::<Vec<_>>()
                .join(" ");
            Ok(format!("ablation\t{points}\n"))
        }
    }
}
