//! Ranking prompts, prompt files and meta-prompt templates.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptOrigin {
    Manual,
    Cot,
    Paraphrase,
    Apeer,
    User,
}

impl PromptOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptOrigin::Manual => "manual",
            PromptOrigin::Cot => "cot",
            PromptOrigin::Paraphrase => "paraphrase",
            PromptOrigin::Apeer => "apeer",
            PromptOrigin::User => "user",
        }
    }
}

impl fmt::Display for PromptOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The system instruction handed to the reranking model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub label: String,
    pub origin: PromptOrigin,
}

impl PromptText {
    pub fn new(text: impl Into<String>, label: impl Into<String>, origin: PromptOrigin) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::validation("prompt text is empty"));
        }
        Ok(Self {
            text,
            label: label.into(),
            origin,
        })
    }
}

/// First line of a prompt file: `#meta {json}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub label: String,
    pub origin: PromptOrigin,
    /// Anything else worth keeping next to the text (score, run directory, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

const META_PREFIX: &str = "#meta ";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptFile {
    pub meta: PromptMeta,
    pub prompt: PromptText,
}

impl PromptFile {
    pub fn new(prompt: PromptText) -> Self {
        Self {
            meta: PromptMeta {
                label: prompt.label.clone(),
                origin: prompt.origin,
                extra: BTreeMap::new(),
            },
            prompt,
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn parse(content: &str, origin_hint: &str) -> Result<Self> {
        let (first, rest) = content.split_once('\n').unwrap_or((content, ""));
        let Some(json) = first.strip_prefix(META_PREFIX) else {
            return Err(Error::parse(origin_hint, 1, "prompt file must start with a `#meta {...}` line"));
        };
        let meta: PromptMeta =
            serde_json::from_str(json.trim()).map_err(|e| Error::parse(origin_hint, 1, e.to_string()))?;
        let text = rest.strip_suffix('\n').unwrap_or(rest);
        let prompt = PromptText::new(text, meta.label.clone(), meta.origin)
            .map_err(|_| Error::parse(origin_hint, 2, "prompt body is empty"))?;
        Ok(Self { meta, prompt })
    }

    pub fn render(&self) -> String {
        let json = serde_json::to_string(&self.meta).expect("prompt metadata is serializable");
        format!("{META_PREFIX}{json}\n{}\n", self.prompt.text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

const MANUAL_PROMPT: &str = include_str!("../assets/manual_prompt.txt");

/// The manual listwise ranking instruction used as the positive seed and baseline.
pub fn manual_prompt() -> PromptText {
    PromptFile::parse(MANUAL_PROMPT, "assets/manual_prompt.txt")
        .expect("bundled manual prompt is valid")
        .prompt
}

/// Text with `{name}` placeholders.
///
/// Every required placeholder must occur exactly once. Braces around anything
/// that is not a bare identifier are left alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i;
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((start, j + 1, &text[start + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>, required: &[&str]) -> Result<Self> {
        let name = name.into();
        let text = text.into();
        let found = placeholders(&text);
        for want in required {
            let n = found.iter().filter(|(_, _, p)| p == want).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "template {name}: placeholder {{{want}}} must appear exactly once, found {n}"
                )));
            }
        }
        Ok(Self { name, text })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes in one pass, so values containing `{x}` are never re-expanded.
    pub fn fill(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for (start, end, name) in placeholders(&self.text) {
            if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                out.push_str(&self.text[last..start]);
                out.push_str(v);
                last = end;
            }
        }
        out.push_str(&self.text[last..]);
        for (k, _) in values {
            if !placeholders(&self.text).iter().any(|(_, _, p)| p == k) {
                return Err(Error::validation(format!("template {} has no placeholder {{{k}}}", self.name)));
            }
        }
        Ok(out)
    }
}

pub const FEEDBACK_FIELDS: &[&str] = &["prompt", "query", "passages", "response", "ideal_ranking"];
pub const REFINE_FIELDS: &[&str] = &["prompt", "feedback_list"];
pub const PREFERENCE_FIELDS: &[&str] = &["prompt", "positive_examples", "negative_examples"];
pub const PARAPHRASE_FIELDS: &[&str] = &["prompt"];
pub const GENERATE_FIELDS: &[&str] = &["variant"];

/// Markers the bundled templates carry so a simulated backend can tell requests apart.
pub mod sentinel {
    pub const RERANK: &str = "<!-- task: rerank -->";
    pub const FEEDBACK: &str = "<!-- task: feedback -->";
    pub const REFINE: &str = "<!-- task: refine -->";
    pub const PREFERENCE: &str = "<!-- task: preference -->";
    pub const PARAPHRASE: &str = "<!-- task: paraphrase -->";
    pub const GENERATE: &str = "<!-- task: generate -->";
}

/// The instructions used to critique, rewrite and steer ranking prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPrompts {
    pub feedback: Template,
    pub refine: Template,
    pub preference: Template,
    pub paraphrase: Template,
    pub generate: Template,
}

impl Default for MetaPrompts {
    fn default() -> Self {
        Self::from_texts(
            include_str!("../assets/feedback.txt"),
            include_str!("../assets/refine.txt"),
            include_str!("../assets/preference.txt"),
            include_str!("../assets/paraphrase.txt"),
            include_str!("../assets/generate.txt"),
        )
        .expect("bundled templates are valid")
    }
}

impl MetaPrompts {
    pub fn from_texts(feedback: &str, refine: &str, preference: &str, paraphrase: &str, generate: &str) -> Result<Self> {
        Ok(Self {
            feedback: Template::new("feedback", feedback, FEEDBACK_FIELDS)?,
            refine: Template::new("refine", refine, REFINE_FIELDS)?,
            preference: Template::new("preference", preference, PREFERENCE_FIELDS)?,
            paraphrase: Template::new("paraphrase", paraphrase, PARAPHRASE_FIELDS)?,
            generate: Template::new("generate", generate, GENERATE_FIELDS)?,
        })
    }

    /// Loads `feedback.txt`, `refine.txt`, ... from `dir`, falling back to the
    /// bundled text for any file that is absent.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let defaults = Self::default();
        let read = |file: &str, fallback: &Template| -> Result<String> {
            let p = dir.join(file);
            if p.exists() {
                fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
            } else {
                Ok(fallback.text().to_string())
            }
        };
        Self::from_texts(
            &read("feedback.txt", &defaults.feedback)?,
            &read("refine.txt", &defaults.refine)?,
            &read("preference.txt", &defaults.preference)?,
            &read("paraphrase.txt", &defaults.paraphrase)?,
            &read("generate.txt", &defaults.generate)?,
        )
    }
}

pub const OPEN_TAG: &str = "<PROMPT>";
pub const CLOSE_TAG: &str = "</PROMPT>";

/// Inner text of the first `<PROMPT>...</PROMPT>` block, trimmed.
pub fn extract_delimited(response: &str) -> Option<String> {
    let start = response.find(OPEN_TAG)? + OPEN_TAG.len();
    let len = response[start..].find(CLOSE_TAG)?;
    let inner = response[start..start + len].trim();
    (!inner.is_empty()).then(|| inner.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_prompt_loads() {
        let p = manual_prompt();
        assert_eq!(p.origin, PromptOrigin::Manual);
        assert!(p.text.starts_with("You are RankGPT"));
        assert!(!p.text.ends_with('\n'));
    }

    #[test]
    fn prompt_file_round_trip() {
        let f = PromptFile::new(PromptText::new("Rank.\nCarefully.", "best", PromptOrigin::Apeer).unwrap())
            .with_extra("score", 0.75);
        let back = PromptFile::parse(&f.render(), "x").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn prompt_file_requires_header() {
        assert!(PromptFile::parse("Rank.\n", "x").is_err());
        assert!(PromptFile::parse("#meta {\"label\":\"a\",\"origin\":\"user\"}\n\n", "x").is_err());
    }

    #[test]
    fn template_counts_placeholders() {
        assert!(Template::new("t", "{a} and {b}", &["a", "b"]).is_ok());
        assert!(Template::new("t", "{a} and {a}", &["a"]).is_err());
        assert!(Template::new("t", "{a}", &["a", "b"]).is_err());
    }

    #[test]
    fn fill_is_single_pass() {
        let t = Template::new("t", "P={prompt} Q={query} [] > {not valid}", &["prompt", "query"]).unwrap();
        let s = t.fill(&[("prompt", "{query}"), ("query", "cats")]).unwrap();
        assert_eq!(s, "P={query} Q=cats [] > {not valid}");
        assert!(t.fill(&[("nope", "x")]).is_err());
    }

    #[test]
    fn bundled_templates_carry_sentinels() {
        let m = MetaPrompts::default();
        assert!(m.feedback.text().contains(sentinel::FEEDBACK));
        assert!(m.refine.text().contains(sentinel::REFINE));
        assert!(m.preference.text().contains(sentinel::PREFERENCE));
        assert!(m.paraphrase.text().contains(sentinel::PARAPHRASE));
        assert!(m.generate.text().contains(sentinel::GENERATE));
    }

    #[test]
    fn load_dir_rejects_broken_template() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("refine.txt"), "no placeholders here").unwrap();
        assert!(matches!(MetaPrompts::load_dir(dir.path()), Err(Error::Config(_))));
        fs::remove_file(dir.path().join("refine.txt")).unwrap();
        assert_eq!(MetaPrompts::load_dir(dir.path()).unwrap(), MetaPrompts::default());
    }

    #[test]
    fn delimiter_extraction() {
        assert_eq!(extract_delimited("x <PROMPT>\n a b \n</PROMPT> <PROMPT>c</PROMPT>").unwrap(), "a b");
        assert_eq!(extract_delimited("<PROMPT>open"), None);
        assert_eq!(extract_delimited("<PROMPT>  </PROMPT>"), None);
    }
}
