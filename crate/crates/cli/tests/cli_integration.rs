//! Binary-level contract tests: exit codes, stderr wording, and report
//! plumbing, all through the compiled executable.

mod common;

use common::{assert_ok, averse, exit_code, write_config, write_corpus, ConfigSpec};

use std::path::{Path, PathBuf};

/// Corpus, identity external attack, replay gateway over an empty
/// transcript. Everything a campaign needs except calibration.
struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    output_dir: PathBuf,
}

fn fixture(attack_texts: AttackTexts) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (docs, trials, same_ids) = write_corpus(dir.path(), 6, 3);

    let doc_text: std::collections::BTreeMap<String, String> =
        std::fs::read_to_string(&docs)
            .unwrap()
            .lines()
            .map(|line| {
                let v: serde_json::Value = serde_json::from_str(line).unwrap();
                (
                    v["doc_id"].as_str().unwrap().to_string(),
                    v["text"].as_str().unwrap().to_string(),
                )
            })
            .collect();
    let mut perturb = String::new();
    for (i, trial_id) in same_ids.iter().enumerate() {
        let original = &doc_text[&format!("d{i:02}a")];
        let reversed = || {
            original
                .split_whitespace()
                .map(|w| w.chars().rev().collect::<String>())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let text = match attack_texts {
            AttackTexts::Identity => original.clone(),
            AttackTexts::Shuffled => reversed(),
            AttackTexts::Mixed if i % 2 == 0 => original.clone(),
            AttackTexts::Mixed => reversed(),
        };
        perturb.push_str(&format!(
            "{}\n",
            serde_json::json!({"trial_id": trial_id, "perturbed_text": text})
        ));
    }
    let perturb_path = dir.path().join("perturb.jsonl");
    std::fs::write(&perturb_path, perturb).unwrap();

    let transcript = dir.path().join("transcript.jsonl");
    std::fs::write(&transcript, "").unwrap();
    let output_dir = dir.path().join("out");
    let attack_toml = format!(
        "[attack]\nkind = \"external\"\nperturbations_path = {perturb_path:?}\n"
    );
    let config = write_config(
        dir.path(),
        "run.toml",
        &ConfigSpec {
            docs: &docs,
            trials: &trials,
            endpoint: "http://127.0.0.1:9",
            mode: "replay",
            transcript: &transcript,
            attack_toml: &attack_toml,
            output_dir: &output_dir,
            seed: 5,
        },
    );
    Fixture {
        _dir: dir,
        config,
        output_dir,
    }
}

#[derive(Clone, Copy)]
enum AttackTexts {
    Identity,
    Shuffled,
    Mixed,
}

fn stderr(output: &std::process::Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &std::process::Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(exit_code(&averse(&["--help"])), 0);
    assert_eq!(exit_code(&averse(&["--version"])), 0);
    assert_eq!(exit_code(&averse(&["attack", "--help"])), 0);
}

#[test]
fn bad_invocations_exit_one() {
    assert_eq!(exit_code(&averse(&["--no-such-flag"])), 1);
    assert_eq!(exit_code(&averse(&["no-such-command"])), 1);
    let out = averse(&["calibrate"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn missing_config_file_exits_one() {
    let out = averse(&["calibrate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn config_pointing_at_missing_corpus_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[corpus]\ndocuments = \"gone.jsonl\"\ntrials = \"gone.jsonl\"\n\n\
         [scorer]\nkind = \"ngram_cosine\"\nn_min = 2\nn_max = 4\nweighting = \"raw\"\n\n\
         [gateway]\nmodel_name = \"m\"\nmode = \"live\"\n\n\
         [run]\noutput_dir = \"out\"\n",
    )
    .unwrap();
    let out = averse(&["calibrate", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("corpus.documents"));
}

#[test]
fn attack_before_calibrate_exits_two_and_names_the_fix() {
    let fx = fixture(AttackTexts::Identity);
    let out = averse(&["attack", "--config", fx.config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("run the calibrate step first"),
        "stderr was: {}",
        stderr(&out)
    );
}

#[test]
fn replay_gap_under_stop_policy_exits_three() {
    // Changed texts force an embedding call that the empty transcript
    // cannot answer.
    let fx = fixture(AttackTexts::Shuffled);
    assert_ok(
        &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
        "calibrate",
    );
    let out = averse(&[
        "attack",
        "--config",
        fx.config.to_str().unwrap(),
        "--fail-policy",
        "stop",
    ]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr(&out));
}

#[test]
fn replay_gap_under_continue_policy_records_failures() {
    // Identity rows need no gateway and survive; changed rows hit the
    // empty transcript and fail in place.
    let fx = fixture(AttackTexts::Mixed);
    assert_ok(
        &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
        "calibrate",
    );
    let out = averse(&[
        "attack",
        "--config",
        fx.config.to_str().unwrap(),
        "--fail-policy",
        "continue",
    ]);
    assert_ok(&out, "attack under continue policy");
    let summary = common::read_summary(&fx.output_dir.join("attack_external.jsonl"));
    assert!(summary["metrics"]["n_failed"].as_u64().unwrap() > 0);
}

#[test]
fn calibrate_then_attack_then_report_round_trip() {
    let fx = fixture(AttackTexts::Identity);
    assert_ok(
        &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
        "calibrate",
    );
    for artifact in ["det.csv", "scores.jsonl", "operating_point.json"] {
        assert!(fx.output_dir.join(artifact).is_file(), "missing {artifact}");
    }
    let op: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.output_dir.join("operating_point.json")).unwrap())
            .unwrap();
    for key in ["threshold", "eer", "frr_at", "far_at", "n_true_trials", "n_false_trials"] {
        assert!(op.get(key).is_some(), "operating point lacks {key}");
    }

    assert_ok(
        &averse(&["attack", "--config", fx.config.to_str().unwrap()]),
        "attack",
    );
    let campaign = fx.output_dir.join("attack_external.jsonl");
    assert!(campaign.is_file());

    let out = averse(&[
        "report",
        "--kind",
        "results-table",
        "--format",
        "markdown",
        campaign.to_str().unwrap(),
    ]);
    assert_ok(&out, "report");
    assert!(stdout(&out).contains("external"));

    // The same table written to a file instead of stdout.
    let table_path = fx.output_dir.join("table.md");
    assert_ok(
        &averse(&[
            "report",
            "--kind",
            "results-table",
            "--format",
            "markdown",
            "--output",
            table_path.to_str().unwrap(),
            campaign.to_str().unwrap(),
        ]),
        "report to file",
    );
    assert!(std::fs::read_to_string(&table_path).unwrap().contains("external"));
}

#[test]
fn det_export_reads_score_files_and_rejects_markdown() {
    let fx = fixture(AttackTexts::Identity);
    assert_ok(
        &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
        "calibrate",
    );
    let scores = fx.output_dir.join("scores.jsonl");

    let out = averse(&[
        "report",
        "--kind",
        "det-export",
        "--format",
        "csv",
        scores.to_str().unwrap(),
    ]);
    assert_ok(&out, "det export");
    let text = stdout(&out);
    assert!(text.starts_with("label,threshold,frr,far,probit_frr,probit_far"));
    // Curves take their labels from the file stem.
    assert!(text.contains("\nscores,"));

    let out = averse(&[
        "report",
        "--kind",
        "det-export",
        "--format",
        "markdown",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1, "markdown curves are not a thing");
}

#[test]
fn density_report_emits_requested_bins() {
    let fx = fixture(AttackTexts::Identity);
    assert_ok(
        &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
        "calibrate",
    );
    assert_ok(
        &averse(&["attack", "--config", fx.config.to_str().unwrap()]),
        "attack",
    );
    let campaign = fx.output_dir.join("attack_external.jsonl");
    let out = averse(&[
        "report",
        "--kind",
        "asr-density",
        "--format",
        "json",
        "--bins",
        "10",
        campaign.to_str().unwrap(),
    ]);
    assert_ok(&out, "density report");
    let bins: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(bins.as_array().unwrap().len(), 10);
}

#[test]
fn score_subcommand_reports_the_pair() {
    let fx = fixture(AttackTexts::Identity);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, "identical text for both sides").unwrap();
    std::fs::write(&b, "identical text for both sides").unwrap();
    let out = averse(&[
        "score",
        "--config",
        fx.config.to_str().unwrap(),
        a.to_str().unwrap(),
        b.to_str().unwrap(),
    ]);
    assert_ok(&out, "score");
    assert!(stdout(&out).contains("score 1.000000"));
}

#[test]
fn sweep_grid_flags_are_exclusive_and_required() {
    let fx = fixture(AttackTexts::Identity);
    let out = averse(&[
        "sweep",
        "--config",
        fx.config.to_str().unwrap(),
        "--fractions",
        "0.5",
        "--story-counts",
        "1",
    ]);
    assert_eq!(exit_code(&out), 1);
    let out = averse(&["sweep", "--config", fx.config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn report_rejects_unknown_kind_and_format() {
    let out = averse(&["report", "--kind", "pie", "--format", "csv", "x.jsonl"]);
    assert_eq!(exit_code(&out), 1);
    let out = averse(&["report", "--kind", "results-table", "--format", "xml", "x.jsonl"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn outputs_are_byte_stable_across_reruns() {
    let fx = fixture(AttackTexts::Identity);
    let run_all = || {
        assert_ok(
            &averse(&["calibrate", "--config", fx.config.to_str().unwrap()]),
            "calibrate",
        );
        assert_ok(
            &averse(&["attack", "--config", fx.config.to_str().unwrap()]),
            "attack",
        );
        (
            std::fs::read(fx.output_dir.join("det.csv")).unwrap(),
            std::fs::read(fx.output_dir.join("scores.jsonl")).unwrap(),
            std::fs::read(fx.output_dir.join("operating_point.json")).unwrap(),
            std::fs::read(fx.output_dir.join("attack_external.jsonl")).unwrap(),
        )
    };
    let first = run_all();
    let second = run_all();
    assert_eq!(first, second);
}

#[test]
fn templates_dir_must_exist_when_configured() {
    let fx = fixture(AttackTexts::Identity);
    let raw = std::fs::read_to_string(&fx.config).unwrap();
    let patched = raw.replace(
        "[run]\n",
        "[run]\ntemplates_dir = \"/nonexistent/templates\"\n",
    );
    let patched_path = Path::new(fx.config.parent().unwrap()).join("patched.toml");
    std::fs::write(&patched_path, patched).unwrap();
    let out = averse(&["calibrate", "--config", patched_path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("templates_dir"));
}
