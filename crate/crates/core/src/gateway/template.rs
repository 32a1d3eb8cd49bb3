//! Prompt templates with literal `{placeholder}` substitution.
//!
//! The attack prompts ship as data files under `templates/` so prompt
//! ablations are a configuration change, not a code change. The builtin
//! store embeds those same files at compile time; a directory override
//! replaces individual templates by file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::GatewayError;

/// Ids of the templates every store starts with.
pub const BUILTIN_TEMPLATE_IDS: [&str; 7] = [
    "vanilla",
    "zeroshot",
    "stepback",
    "author_profile",
    "style_extract",
    "style_rewrite",
    "partial_sentence",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate {
            id: id.into(),
            body: body.into(),
        }
    }

    /// Placeholder names appearing in the body, in first-use-independent
    /// sorted order.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        scan(&self.body, |name, _, _| {
            out.insert(name.to_string());
        });
        out
    }

    /// Substitutes every `{name}` with its binding in one pass. Values are
    /// inserted literally and never re-scanned, so placeholder syntax inside
    /// a value cannot trigger further substitution. An unbound placeholder is
    /// an error naming the placeholder.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let mut unbound = None;
        let mut out = String::with_capacity(self.body.len());
        let mut cursor = 0;
        scan(&self.body, |name, start, end| {
            if unbound.is_some() {
                return;
            }
            match bindings.get(name) {
                Some(value) => {
                    out.push_str(&self.body[cursor..start]);
                    out.push_str(value);
                    cursor = end;
                }
                None => unbound = Some(name.to_string()),
            }
        });
        if let Some(name) = unbound {
            return Err(GatewayError::UnboundPlaceholder {
                template_id: self.id.clone(),
                placeholder: name,
            });
        }
        out.push_str(&self.body[cursor..]);
        Ok(out)
    }
}

/// Calls `visit(name, byte_start, byte_end)` for each `{name}` occurrence,
/// where the byte range covers the braces. Only `[a-z0-9_]+` names count;
/// any other braced run is literal text.
fn scan(body: &str, mut visit: impl FnMut(&str, usize, usize)) {
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let Some(rel_close) = body[i + 1..].find('}') else {
            break;
        };
        let close = i + 1 + rel_close;
        let name = &body[i + 1..close];
        let valid = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if valid {
            visit(name, i, close + 1);
            i = close + 1;
        } else {
            i += 1;
        }
    }
}

/// Convenience free-function form of [`PromptTemplate::render`].
pub fn render_template(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    template.render(bindings)
}

#[derive(Clone, Debug)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateStore {
    /// The seven shipped templates, embedded from `templates/` at compile
    /// time.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (id, body) in [
            ("vanilla", include_str!("../../templates/vanilla.txt")),
            ("zeroshot", include_str!("../../templates/zeroshot.txt")),
            ("stepback", include_str!("../../templates/stepback.txt")),
            (
                "author_profile",
                include_str!("../../templates/author_profile.txt"),
            ),
            (
                "style_extract",
                include_str!("../../templates/style_extract.txt"),
            ),
            (
                "style_rewrite",
                include_str!("../../templates/style_rewrite.txt"),
            ),
            (
                "partial_sentence",
                include_str!("../../templates/partial_sentence.txt"),
            ),
        ] {
            templates.insert(id.to_string(), PromptTemplate::new(id, body));
        }
        TemplateStore { templates }
    }

    /// Builtin store with every `*.txt` in `dir` layered on top, keyed by
    /// file stem. Unknown stems register new templates; known stems override.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let mut store = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| GatewayError::TemplateDir {
            dir: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|e| GatewayError::TemplateDir {
                dir: path.display().to_string(),
                message: e.to_string(),
            })?;
            store.insert(PromptTemplate::new(stem, body));
        }
        Ok(store)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates
            .get(id)
            .ok_or_else(|| GatewayError::UnknownTemplate { id: id.to_string() })
    }

    pub fn ids(&self) -> Vec<&str> {
        self.templates.keys().map(String::as_str).collect()
    }
}
