//! Plain-text templates with `{name}` placeholders (`{{` and `}}` escape braces).

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::PromptError;

pub const DEFAULT_VERSION: &str = "v1";

/// Template names and the placeholders each one may use.
pub const TEMPLATE_SLOTS: &[(&str, &[&str])] = &[
    ("system", &["rubric"]),
    ("examples_intro", &["examples"]),
    ("example", &["index", "score", "metadata"]),
    ("metadata", &["region", "noise"]),
    ("target", &["metadata"]),
    ("feedback", &["feedback"]),
    ("feedback_line", &["id", "predicted", "truth", "error", "noise"]),
    ("region_system", &[]),
    ("region_query", &["vocabulary"]),
];

const BUILTIN_V1: &[(&str, &str)] = &[
    ("system", include_str!("../../templates/v1/system.txt")),
    ("examples_intro", include_str!("../../templates/v1/examples_intro.txt")),
    ("example", include_str!("../../templates/v1/example.txt")),
    ("metadata", include_str!("../../templates/v1/metadata.txt")),
    ("target", include_str!("../../templates/v1/target.txt")),
    ("feedback", include_str!("../../templates/v1/feedback.txt")),
    ("feedback_line", include_str!("../../templates/v1/feedback_line.txt")),
    ("region_system", include_str!("../../templates/v1/region_system.txt")),
    ("region_query", include_str!("../../templates/v1/region_query.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self, PromptError> {
        let err = |reason: String| PromptError::Template {
            name: name.to_string(),
            reason,
        };
        let mut pieces = Vec::new();
        let mut lit = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut slot = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) if ch.is_ascii_lowercase() || ch == '_' => slot.push(ch),
                            Some(ch) => return Err(err(format!("invalid character `{ch}` in placeholder"))),
                            None => return Err(err("unterminated placeholder".into())),
                        }
                    }
                    if !allowed.contains(&slot.as_str()) {
                        return Err(err(format!("unknown placeholder `{{{slot}}}`")));
                    }
                    if !lit.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut lit)));
                    }
                    pieces.push(Piece::Slot(slot));
                }
                '}' => return Err(err("unmatched `}`".into())),
                c => lit.push(c),
            }
        }
        if !lit.is_empty() {
            pieces.push(Piece::Literal(lit));
        }
        Ok(Self {
            source: source.to_string(),
            pieces,
        })
    }

    /// Substitutes placeholders; a placeholder without a value renders empty.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => {
                    if let Some((_, v)) = values.iter().find(|(k, _)| k == name) {
                        out.push_str(v);
                    }
                }
            }
        }
        out
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// A complete, versioned set of prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    /// Templates shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_sources(DEFAULT_VERSION, BUILTIN_V1.iter().map(|&(n, s)| (n, s.to_string())))
            .expect("builtin templates are valid")
    }

    /// Loads `<name>.txt` for every template name from `dir`; the version is
    /// the directory name.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let version = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        let mut sources = Vec::new();
        for (name, _) in TEMPLATE_SLOTS {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                name: name.to_string(),
                reason: format!("{}: {e}", path.display()),
            })?;
            sources.push((*name, text));
        }
        Self::from_sources(&version, sources)
    }

    pub fn from_sources<'a>(
        version: &str,
        sources: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (name, text) in sources {
            let allowed = TEMPLATE_SLOTS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, a)| *a)
                .ok_or_else(|| PromptError::Template {
                    name: name.to_string(),
                    reason: "unknown template name".into(),
                })?;
            templates.insert(name.to_string(), Template::parse(name, &text, allowed)?);
        }
        if let Some((missing, _)) = TEMPLATE_SLOTS.iter().find(|(n, _)| !templates.contains_key(*n)) {
            return Err(PromptError::Template {
                name: missing.to_string(),
                reason: "missing from template set".into(),
            });
        }
        Ok(Self {
            version: version.to_string(),
            templates,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, name: &str) -> &Template {
        &self.templates[name]
    }

    /// SHA-256 over the version and every `(name, source)` pair, length-prefixed.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        feed(self.version.as_bytes());
        for (name, t) in &self.templates {
            feed(name.as_bytes());
            feed(t.source.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_escape() {
        let t = Template::parse("t", "a {x} {{literal}} {y}", &["x", "y"]).unwrap();
        assert_eq!(t.render(&[("x", "1"), ("y", "2")]), "a 1 {literal} 2");
        assert_eq!(t.render(&[("x", "1")]), "a 1 {literal} ");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Template::parse("t", "{nope}", &["x"]).is_err());
        assert!(Template::parse("t", "{x", &["x"]).is_err());
        assert!(Template::parse("t", "x}", &["x"]).is_err());
        assert!(Template::parse("t", "{X}", &["X"]).is_err());
    }

    #[test]
    fn builtin_hash_is_stable_and_sensitive() {
        let a = TemplateSet::builtin();
        assert_eq!(a.hash(), TemplateSet::builtin().hash());
        assert_eq!(a.hash().len(), 64);
        let edited = BUILTIN_V1.iter().map(|&(n, s)| {
            let s = if n == "target" { format!("{s} ") } else { s.to_string() };
            (n, s)
        });
        let b = TemplateSet::from_sources("v1", edited).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn incomplete_set_rejected() {
        let err = TemplateSet::from_sources("v1", [("system", "x".to_string())]).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
