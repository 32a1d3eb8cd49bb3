//! Command implementations. Each one loads what it needs from the run
//! config, drives the library, and writes its artifacts under the output
//! directory; nothing here holds state between invocations, so rerunning a
//! command in replay mode rewrites its outputs byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use averse_core::calibration::{compute_det, compute_eer, write_det_csv, OperatingPoint, ScoredTrial};
use averse_core::campaign::{write_campaign_jsonl, CampaignOptions, CampaignSummary};
use averse_core::corpus::{load_corpus, Corpus};
use averse_core::gateway::{Gateway, TemplateStore};
use averse_core::impersonation::{
    build_style_store, extract_style, run_impersonation_campaign, story_count_sweep, StyleStore,
};
use averse_core::obfuscation::{
    run_obfuscation_campaign, AttackContext, AttackRegistry, ObfuscationSpec,
};
use averse_core::report::{
    ablation_series, asr_density, asr_groups, det_export, render_ablation, render_density,
    render_results_table, results_table, ReportFormat, ReportKind,
};
use averse_core::verifier::{
    decide, DfTable, NgramCosineScorer, Scorer, ScorerRegistry, ScorerSpec, Weighting,
};

use crate::config::{RunConfig, StoryCount};
use crate::error::CliError;

/// Operating point as serialized to disk, with the trial counts that
/// produced it for auditability.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OperatingPointFile {
    #[serde(flatten)]
    pub point: OperatingPoint,
    pub n_true_trials: usize,
    pub n_false_trials: usize,
}

pub fn operating_point_path(output_dir: &Path) -> PathBuf {
    output_dir.join("operating_point.json")
}

fn load_operating_point(output_dir: &Path) -> Result<OperatingPointFile, CliError> {
    let path = operating_point_path(output_dir);
    let raw = fs::read_to_string(&path).map_err(|_| {
        CliError::data(format!(
            "no operating point at {}; run the calibrate step first",
            path.display()
        ))
    })?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Attack names double as file-name stems once anything outside
/// `[A-Za-z0-9]` collapses to an underscore.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Everything a campaign command needs, assembled from config once.
struct Workbench {
    corpus: Corpus,
    scorer: Box<dyn Scorer>,
    gateway: Gateway,
    templates: TemplateStore,
    options: CampaignOptions,
    output_dir: PathBuf,
    seed: u64,
}

fn build_scorer(spec: &ScorerSpec, corpus: &Corpus) -> Result<Box<dyn Scorer>, CliError> {
    // The tf-idf variant needs document frequencies, which only the loaded
    // corpus can provide; everything else comes straight from the registry.
    if let ScorerSpec::NgramCosine {
        n_min,
        n_max,
        weighting: Weighting::Tfidf,
    } = spec
    {
        let table = DfTable::fit(corpus.documents().map(|d| d.text.as_str()), *n_min, *n_max);
        let scorer =
            NgramCosineScorer::new(*n_min, *n_max, Weighting::Tfidf)?.with_df(Arc::new(table));
        return Ok(Box::new(scorer));
    }
    ScorerRegistry::with_builtins()
        .build(spec)
        .map_err(CliError::from)
}

fn setup(config: &RunConfig) -> Result<Workbench, CliError> {
    let mut corpus = load_corpus(&config.corpus.documents, &config.corpus.trials)?;
    if let Some(budget) = config.corpus.truncate_tokens {
        corpus.truncate_documents(budget);
    }
    let scorer = build_scorer(&config.scorer, &corpus)?;
    let gateway = Gateway::new(config.gateway.clone())?;
    let templates = match &config.run.templates_dir {
        Some(dir) => TemplateStore::from_dir(dir)?,
        None => TemplateStore::builtin(),
    };
    fs::create_dir_all(&config.run.output_dir).map_err(|e| {
        CliError::data(format!(
            "cannot create {}: {e}",
            config.run.output_dir.display()
        ))
    })?;
    Ok(Workbench {
        corpus,
        scorer,
        gateway,
        templates,
        options: CampaignOptions {
            parallelism: config.run.parallelism,
            fail_policy: config.run.fail_policy,
        },
        output_dir: config.run.output_dir.clone(),
        seed: config.run.seed,
    })
}

// ───────────────────────────── calibrate ─────────────────────────────

pub fn cmd_calibrate(config: &RunConfig) -> Result<(), CliError> {
    let bench = setup(config)?;
    let mut scored = Vec::with_capacity(bench.corpus.trials().len());
    for trial in bench.corpus.trials() {
        let (text_a, text_b) = bench.corpus.trial_texts(trial);
        let score = bench.scorer.score_pair(text_a, text_b)?;
        scored.push(ScoredTrial {
            trial_id: trial.trial_id.clone(),
            label: trial.label,
            score: score.value(),
        });
    }

    let curve = compute_det(&scored)?;
    let point = compute_eer(&curve)?;

    let det_path = bench.output_dir.join("det.csv");
    let mut det_out = Vec::new();
    write_det_csv(&curve, &mut det_out)?;
    fs::write(&det_path, det_out)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", det_path.display())))?;

    let scores_path = bench.output_dir.join("scores.jsonl");
    let mut lines = String::new();
    for trial in &scored {
        lines.push_str(&serde_json::to_string(trial).expect("trial serialize"));
        lines.push('\n');
    }
    write_text(&scores_path, &lines)?;

    let op_file = OperatingPointFile {
        point,
        n_true_trials: curve.n_true_trials,
        n_false_trials: curve.n_false_trials,
    };
    let op_path = operating_point_path(&bench.output_dir);
    write_text(
        &op_path,
        &(serde_json::to_string_pretty(&op_file).expect("point serialize") + "\n"),
    )?;

    println!(
        "calibrated {} true / {} false trials with {}",
        curve.n_true_trials,
        curve.n_false_trials,
        bench.scorer.name()
    );
    println!(
        "eer {:.6} at threshold {:.6} (frr {:.6}, far {:.6})",
        point.eer, point.threshold, point.frr_at, point.far_at
    );
    println!(
        "wrote {}, {}, {}",
        det_path.display(),
        scores_path.display(),
        op_path.display()
    );
    Ok(())
}

// ───────────────────────────── attack ─────────────────────────────

fn print_summary(summary: &CampaignSummary, path: &Path) {
    let m = &summary.metrics;
    println!(
        "{}: asr {:.4} ({}/{} flipped, {} skipped, {} failed)",
        summary.attack, m.asr, m.n_flipped, m.n_eligible, m.n_skipped, m.n_failed
    );
    println!(
        "semantics: bleu {:.2} rouge_l {:.2} embed_f1 {:.2}",
        m.bleu, m.rouge_l, m.embed_f1
    );
    println!("wrote {}", path.display());
}

fn run_attack_spec(
    bench: &Workbench,
    spec: &ObfuscationSpec,
    point: &OperatingPoint,
    dir: &Path,
) -> Result<(PathBuf, CampaignSummary), CliError> {
    let ctx = AttackContext {
        templates: &bench.templates,
        seed: bench.seed,
    };
    let attack = AttackRegistry::with_builtins().build(spec, &ctx)?;
    let (records, summary) = run_obfuscation_campaign(
        &bench.corpus,
        bench.scorer.as_ref(),
        point,
        attack.as_ref(),
        &bench.gateway,
        &bench.options,
    )?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(format!("attack_{}.jsonl", sanitize(&summary.attack)));
    write_campaign_jsonl(&path, &records, &summary)?;
    Ok((path, summary))
}

pub fn cmd_attack(config: &RunConfig) -> Result<(), CliError> {
    let spec = config
        .attack
        .clone()
        .ok_or_else(|| CliError::usage("config has no [attack] section"))?;
    let bench = setup(config)?;
    let point = load_operating_point(&bench.output_dir)?;
    let (path, summary) = run_attack_spec(&bench, &spec, &point.point, &bench.output_dir.clone())?;
    print_summary(&summary, &path);
    Ok(())
}

// ───────────────────────────── impersonate ─────────────────────────────

fn target_store(
    bench: &Workbench,
    target_author: &str,
) -> Result<StyleStore, CliError> {
    let doc_ids = bench.corpus.docs_by_author(target_author);
    if doc_ids.is_empty() {
        return Err(CliError::data(format!(
            "corpus has no documents by {target_author:?}"
        )));
    }
    let docs: Vec<_> = doc_ids
        .iter()
        .map(|id| bench.corpus.document(id).expect("validated corpus").clone())
        .collect();
    build_style_store(&docs, &bench.gateway).map_err(CliError::from)
}

fn resolve_k(k_stories: StoryCount, store: &StyleStore) -> usize {
    match k_stories {
        StoryCount::All => store.len(),
        StoryCount::Count(n) => n,
    }
}

pub fn cmd_impersonate(config: &RunConfig) -> Result<(), CliError> {
    let section = config
        .impersonation
        .clone()
        .ok_or_else(|| CliError::usage("config has no [impersonation] section"))?;
    let bench = setup(config)?;
    let point = load_operating_point(&bench.output_dir)?;

    let store = target_store(&bench, &section.target_author)?;
    let k = resolve_k(section.k_stories, &store);
    let profile = extract_style(&store, k, &bench.gateway, &bench.templates)?;

    let author_stem = sanitize(&profile.author_id);
    let profile_path = bench.output_dir.join(format!(
        "style_profile_{}_k{}.json",
        author_stem, profile.k_stories_used
    ));
    write_text(
        &profile_path,
        &(serde_json::to_string_pretty(&profile).expect("profile serialize") + "\n"),
    )?;

    let (records, summary) = run_impersonation_campaign(
        &bench.corpus,
        bench.scorer.as_ref(),
        &point.point,
        &profile,
        &bench.gateway,
        &bench.templates,
        &bench.options,
    )?;
    let campaign_path = bench.output_dir.join(format!(
        "impersonation_{}_k{}.jsonl",
        author_stem, profile.k_stories_used
    ));
    write_campaign_jsonl(&campaign_path, &records, &summary)?;

    println!("wrote {}", profile_path.display());
    print_summary(&summary, &campaign_path);
    Ok(())
}

// ───────────────────────────── sweep ─────────────────────────────

pub fn parse_fractions(raw: &str) -> Result<Vec<f64>, CliError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        let value: f64 = part
            .parse()
            .map_err(|_| CliError::usage(format!("bad fraction {part:?}")))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(CliError::usage(format!(
                "fraction {value} is outside [0, 1]"
            )));
        }
        if seen.insert(value.to_bits()) {
            out.push(value);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("no fractions given"));
    }
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

pub fn parse_story_counts(raw: &str) -> Result<Vec<StoryCount>, CliError> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part == "all" {
            out.push(StoryCount::All);
            continue;
        }
        let n: usize = part
            .parse()
            .map_err(|_| CliError::usage(format!("bad story count {part:?}")))?;
        if n == 0 {
            return Err(CliError::usage("story counts start at 1"));
        }
        out.push(StoryCount::Count(n));
    }
    if out.is_empty() {
        return Err(CliError::usage("no story counts given"));
    }
    Ok(out)
}

/// Display form of a fraction, used in sweep directory names. Stable
/// because f64 Display round-trips shortest forms ("0", "0.5").
fn fraction_stem(fraction: f64) -> String {
    sanitize(&format!("{fraction}"))
}

fn sweep_fractions(config: &RunConfig, raw: &str) -> Result<(), CliError> {
    let fractions = parse_fractions(raw)?;
    let bench = setup(config)?;
    let point = load_operating_point(&bench.output_dir)?;

    // An existing partial-attack section contributes its inner template;
    // the grid itself replaces the fraction.
    let inner_template_id = match &config.attack {
        Some(ObfuscationSpec::Partial {
            inner_template_id, ..
        }) => inner_template_id.clone(),
        _ => None,
    };

    let sweep_dir = bench.output_dir.join("sweep");
    let mut campaign_paths = Vec::new();
    for &fraction in &fractions {
        let spec = ObfuscationSpec::Partial {
            fraction,
            seed: Some(bench.seed),
            inner_template_id: inner_template_id.clone(),
        };
        let dir = sweep_dir.join(format!("fraction_{}", fraction_stem(fraction)));
        let (path, summary) = run_attack_spec(&bench, &spec, &point.point, &dir)?;
        println!(
            "fraction {fraction}: asr {:.4} ({} attacked)",
            summary.metrics.asr, summary.metrics.n_eligible
        );
        campaign_paths.push(path);
    }

    let series = ablation_series(&campaign_paths)?;
    let csv_path = sweep_dir.join("series.csv");
    write_text(&csv_path, &render_ablation(&series, ReportFormat::Csv)?)?;
    let json_path = sweep_dir.join("series.json");
    write_text(&json_path, &render_ablation(&series, ReportFormat::Json)?)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn sweep_story_counts(config: &RunConfig, raw: &str) -> Result<(), CliError> {
    let requested = parse_story_counts(raw)?;
    let section = config
        .impersonation
        .clone()
        .ok_or_else(|| CliError::usage("story-count sweeps need an [impersonation] section"))?;
    let bench = setup(config)?;
    let point = load_operating_point(&bench.output_dir)?;

    let store = target_store(&bench, &section.target_author)?;
    let ks: Vec<usize> = requested.iter().map(|k| resolve_k(*k, &store)).collect();
    let points = story_count_sweep(
        &bench.corpus,
        bench.scorer.as_ref(),
        &point.point,
        &store,
        &ks,
        &bench.gateway,
        &bench.templates,
        &bench.options,
    )?;

    let sweep_dir = bench.output_dir.join("sweep");
    let author_stem = sanitize(&section.target_author);
    let mut series_csv = String::from("stories,asr\n");
    let mut series_rows = Vec::new();
    for (k, sweep_point) in &points {
        let dir = sweep_dir.join(format!("stories_{k}"));
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let profile_path = dir.join(format!("style_profile_{author_stem}_k{k}.json"));
        write_text(
            &profile_path,
            &(serde_json::to_string_pretty(&sweep_point.profile).expect("profile serialize")
                + "\n"),
        )?;
        let campaign_path = dir.join(format!("impersonation_{author_stem}_k{k}.jsonl"));
        write_campaign_jsonl(&campaign_path, &sweep_point.records, &sweep_point.summary)?;
        let asr = sweep_point.summary.metrics.asr;
        println!("k {k}: asr {asr:.4}");
        series_csv.push_str(&format!("{k},{asr}\n"));
        series_rows.push(serde_json::json!({ "stories": k, "asr": asr }));
    }

    let csv_path = sweep_dir.join("series.csv");
    write_text(&csv_path, &series_csv)?;
    let json_path = sweep_dir.join("series.json");
    write_text(
        &json_path,
        &(serde_json::to_string_pretty(&series_rows).expect("series serialize") + "\n"),
    )?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

pub fn cmd_sweep(
    config: &RunConfig,
    fractions: Option<&str>,
    story_counts: Option<&str>,
) -> Result<(), CliError> {
    match (fractions, story_counts) {
        (Some(f), None) => sweep_fractions(config, f),
        (None, Some(s)) => sweep_story_counts(config, s),
        (Some(_), Some(_)) => Err(CliError::usage(
            "--fractions and --story-counts are mutually exclusive",
        )),
        (None, None) => Err(CliError::usage(
            "sweep needs --fractions or --story-counts",
        )),
    }
}

// ───────────────────────────── report ─────────────────────────────

pub fn parse_report_kind(raw: &str) -> Result<ReportKind, CliError> {
    match raw {
        "results-table" => Ok(ReportKind::ResultsTable),
        "asr-density" => Ok(ReportKind::AsrDensity),
        "det-export" => Ok(ReportKind::DetExport),
        "ablation-sweep" => Ok(ReportKind::AblationSweep),
        other => Err(CliError::usage(format!(
            "unknown report kind {other:?} (expected results-table, asr-density, det-export, or ablation-sweep)"
        ))),
    }
}

pub fn parse_report_format(raw: &str) -> Result<ReportFormat, CliError> {
    match raw {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        "markdown" => Ok(ReportFormat::Markdown),
        "svg-lines" => Ok(ReportFormat::SvgLines),
        other => Err(CliError::usage(format!(
            "unknown report format {other:?} (expected csv, json, markdown, or svg-lines)"
        ))),
    }
}

fn read_score_file(path: &Path) -> Result<Vec<ScoredTrial>, CliError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut trials = Vec::new();
    for (index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trial: ScoredTrial = serde_json::from_str(line).map_err(|e| {
            CliError::data(format!("{} line {}: {e}", path.display(), index + 1))
        })?;
        trials.push(trial);
    }
    Ok(trials)
}

pub fn cmd_report(
    kind: &str,
    format: &str,
    bins: usize,
    inputs: &[PathBuf],
    output: Option<&Path>,
) -> Result<(), CliError> {
    let kind = parse_report_kind(kind)?;
    let format = parse_report_format(format)?;
    if inputs.is_empty() {
        return Err(CliError::usage("report needs at least one input file"));
    }

    let rendered = match kind {
        ReportKind::ResultsTable => {
            let rows = results_table(inputs)?;
            render_results_table(&rows, format)?
        }
        ReportKind::AsrDensity => {
            let groups = asr_groups(inputs)?;
            let values: Vec<f64> = groups.iter().map(|(_, asr)| *asr).collect();
            let density = asr_density(&values, bins)?;
            render_density(&density, format)?
        }
        ReportKind::DetExport => {
            // Inputs are per-trial score files; each becomes one labeled
            // curve, named after its file stem.
            let mut curves = Vec::new();
            for path in inputs {
                let trials = read_score_file(path)?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                curves.push((label, compute_det(&trials)?));
            }
            det_export(&curves, format)?
        }
        ReportKind::AblationSweep => {
            let series = ablation_series(inputs)?;
            render_ablation(&series, format)?
        }
    };

    match output {
        Some(path) => {
            write_text(path, &rendered)?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(rendered.as_bytes())
                .map_err(|e| CliError::data(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

// ───────────────────────────── score ─────────────────────────────

pub fn cmd_score(config: &RunConfig, text_a: &Path, text_b: &Path) -> Result<(), CliError> {
    let bench = setup(config)?;
    let read = |path: &Path| -> Result<String, CliError> {
        fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
    };
    let a = read(text_a)?;
    let b = read(text_b)?;
    let score = bench.scorer.score_pair(&a, &b)?;
    println!("score {:.6}", score.value());
    if let Ok(point) = load_operating_point(&bench.output_dir) {
        let decision = decide(score, point.point.threshold);
        println!(
            "decision at threshold {:.6}: {:?}",
            point.point.threshold, decision.label
        );
    }
    Ok(())
}
