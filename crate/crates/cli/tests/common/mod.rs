//! Shared fixture plumbing for the binary-level tests: tiny corpora on
//! disk, run configs pointing at them, and a wrapper for invoking the
//! compiled executable.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// One corpus author: a pair of stylistically close documents built from a
/// private two-letter vocabulary, so character n-gram cosine separates
/// same-author from cross-author pairs.
fn author_docs(index: usize) -> (String, String, String) {
    let alphabet = "bcdfghjklmnpqrstvwxz";
    let bytes = alphabet.as_bytes();
    let l1 = bytes[index % bytes.len()] as char;
    let l2 = bytes[(index / bytes.len()) % bytes.len()] as char;
    let word = |k: usize| format!("{l1}{l2}{k}{l2}{l1}");
    let words: Vec<String> = (0..12).map(word).collect();
    let doc_a = format!(
        "Start {} {} {} {} {} {}. Then {} {} {} {} {} {}.",
        words[0], words[1], words[2], words[3], words[4], words[5],
        words[6], words[7], words[8], words[9], words[10], words[11],
    );
    let doc_b = format!(
        "Start {} {} {} {} {} {}. Then {} {} {} {} {} {}.",
        words[1], words[0], words[3], words[2], words[5], words[4],
        words[7], words[6], words[9], words[8], words[11], words[10],
    );
    (format!("a{index:02}"), doc_a, doc_b)
}

/// Writes documents and trials for `n_authors` authors: one same-author
/// trial per author plus `n_different` cross-author trials. Returns the
/// (documents, trials) paths and the same-author trial ids.
pub fn write_corpus(dir: &Path, n_authors: usize, n_different: usize) -> (PathBuf, PathBuf, Vec<String>) {
    assert!(n_different < n_authors);
    let mut docs = String::new();
    let mut trials = String::new();
    let mut same_ids = Vec::new();
    for i in 0..n_authors {
        let (author, text_a, text_b) = author_docs(i);
        docs.push_str(&format!(
            "{}\n",
            serde_json::json!({"doc_id": format!("d{i:02}a"), "author_id": author, "text": text_a})
        ));
        docs.push_str(&format!(
            "{}\n",
            serde_json::json!({"doc_id": format!("d{i:02}b"), "author_id": author, "text": text_b})
        ));
        let trial_id = format!("tt{i:02}");
        trials.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "trial_id": trial_id,
                "doc_a": format!("d{i:02}a"),
                "doc_b": format!("d{i:02}b"),
                "label": "same_author"
            })
        ));
        same_ids.push(trial_id);
    }
    for j in 0..n_different {
        trials.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "trial_id": format!("ft{j:02}"),
                "doc_a": format!("d{j:02}a"),
                "doc_b": format!("d{:02}b", j + 1),
                "label": "different_author"
            })
        ));
    }
    let docs_path = dir.join("docs.jsonl");
    let trials_path = dir.join("trials.jsonl");
    std::fs::write(&docs_path, docs).unwrap();
    std::fs::write(&trials_path, trials).unwrap();
    (docs_path, trials_path, same_ids)
}

pub struct ConfigSpec<'a> {
    pub docs: &'a Path,
    pub trials: &'a Path,
    pub endpoint: &'a str,
    pub mode: &'a str,
    pub transcript: &'a Path,
    pub attack_toml: &'a str,
    pub output_dir: &'a Path,
    pub seed: u64,
}

/// Renders a full run config. The attack section arrives as raw TOML so
/// callers can pick any strategy shape.
pub fn write_config(dir: &Path, name: &str, spec: &ConfigSpec) -> PathBuf {
    let text = format!(
        "[corpus]\ndocuments = {:?}\ntrials = {:?}\n\n\
         [scorer]\nkind = \"ngram_cosine\"\nn_min = 2\nn_max = 4\nweighting = \"raw\"\n\n\
         [gateway]\nchat_endpoint = {:?}\nembed_endpoint = {:?}\nmodel_name = \"stub-model\"\nmode = {:?}\ntranscript_path = {:?}\n\n\
         {}\n\
         [run]\noutput_dir = {:?}\nseed = {}\nparallelism = 1\nfail_policy = \"stop\"\n",
        spec.docs,
        spec.trials,
        spec.endpoint,
        spec.endpoint,
        spec.mode,
        spec.transcript,
        spec.attack_toml,
        spec.output_dir,
        spec.seed,
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn averse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_averse"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn assert_ok(output: &Output, context: &str) {
    assert!(
        output.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

pub fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Reads a campaign file's trailing summary object.
pub fn read_summary(path: &Path) -> serde_json::Value {
    let raw = std::fs::read_to_string(path).unwrap();
    let last = raw.lines().rfind(|l| !l.trim().is_empty()).unwrap();
    let value: serde_json::Value = serde_json::from_str(last).unwrap();
    value["summary"].clone()
}

/// Counts attacked and flipped records in a campaign file, skipping the
/// summary line.
pub fn recount_flips(path: &Path) -> (usize, usize) {
    let raw = std::fs::read_to_string(path).unwrap();
    let mut attacked = 0;
    let mut flipped = 0;
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        if value.get("summary").is_some() {
            continue;
        }
        if value["status"] == "attacked" {
            attacked += 1;
            if value["flipped"] == true {
                flipped += 1;
            }
        }
    }
    (attacked, flipped)
}
