//! A deterministic stand-in for the language model.
//!
//! Ranking quality is a known function of how many canonical feature phrases
//! the system prompt contains: with `s` of `F` phrases present, the ideal
//! ordering of a window of `l` passages is disturbed by
//! `round(l * (F - s) * noise_scale / F)` seeded adjacent transpositions.
//! Critique and rewrite requests add the missing phrases one at a time, so an
//! optimization loop driven by this backend has a known best outcome.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, Query, Qrels};
use crate::dataset::TrainingInstance;
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, LlmRequest, LlmResponse};
use crate::prompt::{sentinel, CLOSE_TAG, OPEN_TAG};
use crate::util::{derive_seed, seeded_rng};

pub const DEFAULT_FEATURE_PHRASES: [&str; 4] = [
    "focus on the intent behind the query",
    "prefer passages that directly answer the query",
    "penalize passages that are off-topic",
    "compare passages against each other before ranking",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub feature_phrases: Vec<String>,
    /// Fraction of the window length swapped when no phrase is present.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

fn default_noise_scale() -> f64 {
    0.5
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            feature_phrases: DEFAULT_FEATURE_PHRASES.iter().map(|s| s.to_string()).collect(),
            noise_scale: default_noise_scale(),
        }
    }
}

const DRAFTS: [&str; 4] = [
    "Order the passages from most to least relevant to the query and answer with their identifiers.",
    "Read the query, then list the passage identifiers from best match to worst match.",
    "Sort the numbered passages by how well they match the search query. Reply only with identifiers.",
    "Give the identifiers of the passages ranked by relevance, best first.",
];

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hidden relevance plus the rules that turn a prompt into ranking quality.
#[derive(Debug, Clone, Default)]
pub struct OracleWorld {
    config: OracleConfig,
    grades: HashMap<String, Vec<(String, u32)>>,
}

impl OracleWorld {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if config.feature_phrases.is_empty() || config.feature_phrases.iter().any(|p| p.trim().is_empty()) {
            return Err(Error::Config("oracle needs at least one non-empty feature phrase".into()));
        }
        if !(config.noise_scale.is_finite() && config.noise_scale >= 0.0) {
            return Err(Error::Config("oracle noise_scale must be a non-negative number".into()));
        }
        Ok(Self {
            config,
            grades: HashMap::new(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn num_features(&self) -> usize {
        self.config.feature_phrases.len()
    }

    pub fn register(&mut self, query_text: &str, passage_text: &str, grade: u32) {
        let entry = self.grades.entry(normalize(query_text)).or_default();
        let key = normalize(passage_text);
        match entry.iter_mut().find(|(p, _)| *p == key) {
            Some(slot) => slot.1 = grade,
            None => entry.push((key, grade)),
        }
    }

    pub fn register_instance(&mut self, instance: &TrainingInstance) {
        for p in &instance.candidates {
            let g = instance.grade(&p.id);
            if g > 0 {
                self.register(&instance.query.text, &p.text, g);
            }
        }
    }

    /// Registers every positive judgment whose query and passage are known.
    pub fn register_qrels(&mut self, queries: &[Query], collection: &Collection, qrels: &Qrels) {
        let text: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
        for (qid, pid, g) in qrels.iter() {
            if g == 0 {
                continue;
            }
            if let (Some(q), Some(p)) = (text.get(qid), collection.get(pid)) {
                self.register(q, &p.text, g);
            }
        }
    }

    /// Grade of a possibly truncated passage rendering.
    pub fn grade(&self, query_text: &str, passage_text: &str) -> u32 {
        let Some(judged) = self.grades.get(&normalize(query_text)) else {
            return 0;
        };
        let shown = normalize(passage_text);
        judged
            .iter()
            .find(|(full, _)| {
                full.starts_with(&shown) && (full.len() == shown.len() || full.as_bytes()[shown.len()] == b' ')
            })
            .map_or(0, |(_, g)| *g)
    }

    pub fn present_features(&self, prompt: &str) -> usize {
        let lower = prompt.to_lowercase();
        self.config
            .feature_phrases
            .iter()
            .filter(|p| lower.contains(&p.to_lowercase()))
            .count()
    }

    fn first_absent(&self, prompt: &str) -> Option<&str> {
        let lower = prompt.to_lowercase();
        self.config
            .feature_phrases
            .iter()
            .find(|p| !lower.contains(&p.to_lowercase()))
            .map(String::as_str)
    }

    pub fn swaps(&self, window_len: usize, present: usize) -> usize {
        let f = self.num_features();
        let missing = f.saturating_sub(present);
        ((window_len * missing) as f64 * self.config.noise_scale / f as f64).round() as usize
    }

    /// The simulated answer to a rerank request, as 1-based window positions.
    ///
    /// The transposition sequence depends on the query alone; the prompt only
    /// decides how long a prefix of it is applied.
    pub fn rank(&self, system: &str, query_text: &str, passages: &[&str]) -> Vec<usize> {
        let l = passages.len();
        let grades: Vec<u32> = passages.iter().map(|p| self.grade(query_text, p)).collect();
        let mut order: Vec<usize> = (1..=l).collect();
        order.sort_by(|&a, &b| grades[b - 1].cmp(&grades[a - 1]).then(a.cmp(&b)));
        if l < 2 {
            return order;
        }
        let n = self.swaps(l, self.present_features(system));
        let mut rng = seeded_rng(derive_seed(&[b"oracle-rerank", normalize(query_text).as_bytes()]));
        for _ in 0..n {
            let j = rng.gen_range(0..l - 1);
            order.swap(j, j + 1);
        }
        order
    }

    fn append_phrase(prompt: &str, phrase: &str) -> String {
        let mut chars = phrase.chars();
        let sentence = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect::<String>(),
            None => String::new(),
        };
        format!("{}\n{sentence}.", prompt.trim_end())
    }

    pub fn complete_text(&self, request: &LlmRequest) -> Result<String> {
        let user = request.user_text();
        if user.contains(sentinel::RERANK) {
            let (query, passages) = parse_rerank(&user)?;
            let order = self.rank(request.system_text().unwrap_or(""), &query, &passages);
            return Ok(order.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > "));
        }
        if user.contains(sentinel::FEEDBACK) {
            let prompt = current_prompt(&user)?;
            return Ok(match self.first_absent(&prompt) {
                Some(p) => format!(
                    "The instruction never asks the model to {p}. Add a sentence telling it to {p}."
                ),
                None => "No weaknesses found; the instruction already covers what matters.".to_string(),
            });
        }
        if user.contains(sentinel::REFINE) || user.contains(sentinel::PREFERENCE) {
            let prompt = current_prompt(&user)?;
            let revised = match self.first_absent(&prompt) {
                Some(p) => Self::append_phrase(&prompt, p),
                None => prompt,
            };
            return Ok(wrap(&revised));
        }
        if user.contains(sentinel::PARAPHRASE) {
            return Ok(wrap(&rotate_sentences(&current_prompt(&user)?)));
        }
        if user.contains(sentinel::GENERATE) {
            let variant = user
                .lines()
                .find_map(|l| l.trim().strip_prefix("Candidate number:"))
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Protocol("generate request without a candidate number".into()))?;
            let draft = DRAFTS[variant.saturating_sub(1) % DRAFTS.len()];
            return Ok(wrap(&format!("{draft} (Draft {variant}.)")));
        }
        Err(Error::Protocol("oracle cannot classify request: no task marker found".into()))
    }
}

fn wrap(text: &str) -> String {
    format!("{OPEN_TAG}\n{text}\n{CLOSE_TAG}")
}

fn current_prompt(user: &str) -> Result<String> {
    const OPEN: &str = "<CURRENT_PROMPT>";
    const CLOSE: &str = "</CURRENT_PROMPT>";
    let start = user
        .find(OPEN)
        .ok_or_else(|| Error::Protocol("request has no <CURRENT_PROMPT> block".into()))?
        + OPEN.len();
    let len = user[start..]
        .find(CLOSE)
        .ok_or_else(|| Error::Protocol("unterminated <CURRENT_PROMPT> block".into()))?;
    Ok(user[start..start + len].trim().to_string())
}

fn parse_rerank(user: &str) -> Result<(String, Vec<&str>)> {
    let query = user
        .lines()
        .find_map(|l| l.strip_prefix("Query: "))
        .ok_or_else(|| Error::Protocol("rerank request without a query line".into()))?;
    let mut passages = Vec::new();
    for line in user.lines() {
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some((num, text)) = rest.split_once("] ") else { continue };
        if num.parse::<usize>() == Ok(passages.len() + 1) {
            passages.push(text);
        }
    }
    if passages.is_empty() {
        return Err(Error::Protocol("rerank request lists no passages".into()));
    }
    Ok((query.to_string(), passages))
}

fn rotate_sentences(prompt: &str) -> String {
    let lines: Vec<&str> = prompt.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() > 1 {
        let mut v = lines[1..].to_vec();
        v.push(lines[0]);
        return v.join("\n");
    }
    let parts: Vec<&str> = prompt.split_inclusive(". ").map(str::trim).collect();
    if parts.len() > 1 {
        let mut v = parts[1..].to_vec();
        v.push(parts[0]);
        let joined = v.join(" ");
        if joined.ends_with('.') {
            joined
        } else {
            format!("{joined}.")
        }
    } else {
        format!("In short: {}", prompt.trim())
    }
}

pub struct OracleBackend {
    world: OracleWorld,
}

impl OracleBackend {
    pub fn new(world: OracleWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }
}

impl ChatBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle_sim"
    }

    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse> {
        self.world.complete_text(request).map(LlmResponse::text)
    }
}
