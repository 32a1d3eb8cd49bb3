//! Request transcripts for record/replay.
//!
//! One JSONL line per completed call: `{"key": <hex>, "kind": "chat" |
//! "embed", "response": ...}`. The key is a SHA-256 over the request kind and
//! everything that shapes the response (model, sampling temperature, prompt
//! or input batch), so replay lookups are exact and collision-free in
//! practice.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Embed,
}

#[derive(Serialize, Deserialize)]
struct TranscriptLine {
    key: String,
    kind: CallKind,
    response: serde_json::Value,
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Key for one chat completion. The temperature enters as its exact bit
/// pattern so 0.0 and -0.0 or any rounding variation cannot alias.
pub fn chat_key(model: &str, temperature: f64, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"chat\0");
    h.update(model.as_bytes());
    h.update(b"\0");
    h.update(temperature.to_bits().to_le_bytes());
    h.update(b"\0");
    h.update(prompt.as_bytes());
    hex_digest(h)
}

/// Key for one embedding batch. Inputs are length-prefixed so boundaries are
/// unambiguous.
pub fn embed_key(model: &str, texts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(b"embed\0");
    h.update(model.as_bytes());
    h.update(b"\0");
    for text in texts {
        h.update((text.len() as u64).to_le_bytes());
        h.update(text.as_bytes());
    }
    hex_digest(h)
}

/// In-memory transcript plus an optional append writer (record mode).
#[derive(Debug)]
pub struct Transcript {
    entries: BTreeMap<String, (CallKind, serde_json::Value)>,
    writer: Option<BufWriter<File>>,
}

impl Transcript {
    pub fn empty() -> Self {
        Transcript {
            entries: BTreeMap::new(),
            writer: None,
        }
    }

    /// Loads an existing transcript for replay. The file must exist.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|_| GatewayError::MissingTranscript {
            path: display.clone(),
        })?;
        let mut entries = BTreeMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::TranscriptParse {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine =
                serde_json::from_str(&line).map_err(|e| GatewayError::TranscriptParse {
                    path: display.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.insert(parsed.key, (parsed.kind, parsed.response));
        }
        Ok(Transcript {
            entries,
            writer: None,
        })
    }

    /// Opens for recording: keeps any existing entries (so interrupted
    /// recordings resume instead of re-spending calls) and appends new ones.
    pub fn open_for_record(path: &Path) -> Result<Self, GatewayError> {
        let mut transcript = if path.exists() {
            Self::load(path)?
        } else {
            Self::empty()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::TranscriptIo {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        transcript.writer = Some(BufWriter::new(file));
        Ok(transcript)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str, kind: CallKind) -> Option<&serde_json::Value> {
        self.entries
            .get(key)
            .and_then(|(k, v)| (*k == kind).then_some(v))
    }

    /// Stores and (when recording) appends one entry. Re-inserting an
    /// existing key is a no-op so a retried request is never duplicated on
    /// disk.
    pub fn insert(
        &mut self,
        key: String,
        kind: CallKind,
        response: serde_json::Value,
    ) -> Result<(), GatewayError> {
        if self.entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(writer) = &mut self.writer {
            let line = TranscriptLine {
                key: key.clone(),
                kind,
                response: response.clone(),
            };
            let encoded = serde_json::to_string(&line).expect("transcript line serializes");
            writeln!(writer, "{encoded}").map_err(|e| GatewayError::TranscriptIo {
                path: "<transcript>".into(),
                message: e.to_string(),
            })?;
            writer.flush().map_err(|e| GatewayError::TranscriptIo {
                path: "<transcript>".into(),
                message: e.to_string(),
            })?;
        }
        self.entries.insert(key, (kind, response));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_distinct_across_kinds_and_inputs() {
        let chat = chat_key("m", 0.0, "hello");
        assert_eq!(chat.len(), 64);
        assert_ne!(chat, chat_key("m", 0.0, "hello "));
        assert_ne!(chat, chat_key("m2", 0.0, "hello"));
        assert_ne!(chat, chat_key("m", 0.1, "hello"));
        assert_ne!(chat, embed_key("m", &["hello"]));
        // length prefixing keeps batch boundaries unambiguous
        assert_ne!(embed_key("m", &["ab", "c"]), embed_key("m", &["a", "bc"]));
    }

    #[test]
    fn record_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        {
            let mut t = Transcript::open_for_record(&path).unwrap();
            t.insert(
                chat_key("m", 0.0, "p"),
                CallKind::Chat,
                serde_json::json!("reply"),
            )
            .unwrap();
            t.insert(
                embed_key("m", &["x"]),
                CallKind::Embed,
                serde_json::json!([[1.0, 0.0]]),
            )
            .unwrap();
            // duplicate insert must not duplicate the line on disk
            t.insert(
                chat_key("m", 0.0, "p"),
                CallKind::Chat,
                serde_json::json!("reply"),
            )
            .unwrap();
        }
        let loaded = Transcript::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(
            loaded.get(&chat_key("m", 0.0, "p"), CallKind::Chat),
            Some(&serde_json::json!("reply"))
        );
        // kind mismatch misses
        assert!(loaded.get(&chat_key("m", 0.0, "p"), CallKind::Embed).is_none());
    }

    #[test]
    fn load_missing_file_errors() {
        let err = Transcript::load(Path::new("/nonexistent/t.jsonl")).unwrap_err();
        assert!(matches!(err, GatewayError::MissingTranscript { .. }));
    }

    #[test]
    fn load_reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"key\":\"k\",\"kind\":\"chat\",\"response\":\"r\"}\nnope\n").unwrap();
        let err = Transcript::load(&path).unwrap_err();
        match err {
            GatewayError::TranscriptParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }
}
