//! Listwise permutation-generation reranking.
//!
//! A window of passages is shown to the model as `[1] ... [l]`, the model
//! answers with `[i] > [j] > ...`, and the answer is repaired into a
//! permutation. Longer lists are covered by sliding windows from the tail
//! towards the head.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Query};
use crate::error::{Error, Result};
use crate::llm::{ChatMessage, LlmClient, LlmRequest};
use crate::prompt::sentinel;
use crate::util::truncate_words;

pub use crate::prompt::{PromptOrigin, PromptText};

pub const MAX_WINDOW: usize = 100;
pub const DEFAULT_MAX_PASSAGE_WORDS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_size: usize,
    pub step: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        Self {
            window_size: 20,
            step: 10,
        }
    }
}

impl WindowPlan {
    pub fn new(window_size: usize, step: usize) -> Result<Self> {
        let plan = Self { window_size, step };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.window_size || self.window_size > MAX_WINDOW {
            return Err(Error::validation(format!(
                "window plan needs 0 < step <= window_size <= {MAX_WINDOW}, got step {} window {}",
                self.step, self.window_size
            )));
        }
        Ok(())
    }

    /// Start offsets of the windows covering a list of length `len`, in processing order.
    pub fn starts(&self, len: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if len == 0 {
            return out;
        }
        let mut start = len.saturating_sub(self.window_size);
        loop {
            out.push(start);
            if start == 0 {
                return out;
            }
            start = start.saturating_sub(self.step);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    /// 1-based window positions, best first.
    pub order: Vec<usize>,
    /// Set when the raw answer needed any repair.
    pub repaired: bool,
    /// Set when the answer contained no usable index at all.
    pub fallback: bool,
}

impl Permutation {
    pub fn identity(l: usize) -> Self {
        Self {
            order: (1..=l).collect(),
            repaired: false,
            fallback: false,
        }
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| items[i - 1].clone()).collect()
    }

    pub fn render(&self) -> String {
        self.order
            .iter()
            .map(|i| format!("[{i}]"))
            .collect::<Vec<_>>()
            .join(" > ")
    }
}

fn integers(text: &str) -> impl Iterator<Item = Option<usize>> + '_ {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok())
}

/// Reads every integer in `text` in order and repairs the result into a
/// permutation of `1..=l`: out-of-range values are dropped, repeats keep
/// their first position, and missing indices are appended in ascending order.
pub fn parse_permutation(text: &str, l: usize) -> Permutation {
    let mut seen = vec![false; l + 1];
    let mut order = Vec::with_capacity(l);
    let mut repaired = false;
    for n in integers(text) {
        match n {
            Some(i) if (1..=l).contains(&i) => {
                if seen[i] {
                    repaired = true;
                } else {
                    seen[i] = true;
                    order.push(i);
                }
            }
            _ => repaired = true,
        }
    }
    let fallback = order.is_empty() && l > 0;
    if order.len() < l {
        repaired = true;
        order.extend((1..=l).filter(|&i| !seen[i]));
    }
    Permutation {
        order,
        repaired,
        fallback,
    }
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_listwise_prompt(
    prompt: &PromptText,
    query: &Query,
    window: &[Passage],
    max_passage_words: usize,
) -> Result<Vec<ChatMessage>> {
    if window.is_empty() {
        return Err(Error::validation("cannot rerank an empty window"));
    }
    if window.len() > MAX_WINDOW {
        return Err(Error::validation(format!(
            "window of {} passages exceeds the maximum of {MAX_WINDOW}",
            window.len()
        )));
    }
    let n = window.len();
    let mut user = format!("{}\nQuery: {}\n\n", sentinel::RERANK, collapse(&query.text));
    for (i, p) in window.iter().enumerate() {
        user.push_str(&format!("[{}] {}\n", i + 1, truncate_words(&p.text, max_passage_words)));
    }
    user.push_str(&format!(
        "\nRank the {n} passages above by relevance to the query. Answer only with their identifiers in descending order of relevance, in the form [i] > [j] > ..., listing each of the {n} identifiers exactly once."
    ));
    Ok(vec![ChatMessage::system(prompt.text.clone()), ChatMessage::user(user)])
}

/// What to do when a window's completion fails outright.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    Propagate,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankSettings {
    pub model: String,
    #[serde(default = "default_words")]
    pub max_passage_words: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub on_error: ErrorPolicy,
}

fn default_words() -> usize {
    DEFAULT_MAX_PASSAGE_WORDS
}

fn default_tokens() -> u32 {
    crate::llm::DEFAULT_MAX_OUTPUT_TOKENS
}

impl RerankSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            max_passage_words: DEFAULT_MAX_PASSAGE_WORDS,
            temperature: 0.0,
            max_output_tokens: default_tokens(),
            on_error: ErrorPolicy::Propagate,
        }
    }
}

#[derive(Debug, Default)]
pub struct RepairStats {
    windows: AtomicU64,
    repaired: AtomicU64,
    fallbacks: AtomicU64,
    errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairCounts {
    pub windows: u64,
    pub repaired: u64,
    pub fallbacks: u64,
    pub errors: u64,
}

impl RepairStats {
    pub fn snapshot(&self) -> RepairCounts {
        RepairCounts {
            windows: self.windows.load(Ordering::Relaxed),
            repaired: self.repaired.load(Ordering::Relaxed),
            fallbacks: self.fallbacks.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub permutation: Permutation,
    /// Raw model answer; empty when the error policy substituted the identity.
    pub response: String,
}

pub struct Reranker<'a> {
    client: &'a LlmClient,
    settings: RerankSettings,
    stats: RepairStats,
}

impl<'a> Reranker<'a> {
    pub fn new(client: &'a LlmClient, settings: RerankSettings) -> Self {
        Self {
            client,
            settings,
            stats: RepairStats::default(),
        }
    }

    pub fn settings(&self) -> &RerankSettings {
        &self.settings
    }

    pub fn client(&self) -> &LlmClient {
        self.client
    }

    pub fn stats(&self) -> RepairCounts {
        self.stats.snapshot()
    }

    pub fn request(&self, prompt: &PromptText, query: &Query, window: &[Passage]) -> Result<LlmRequest> {
        let messages = render_listwise_prompt(prompt, query, window, self.settings.max_passage_words)?;
        Ok(LlmRequest::new(self.settings.model.clone(), messages)
            .with_temperature(self.settings.temperature)
            .with_max_output_tokens(self.settings.max_output_tokens))
    }

    pub fn rerank_window(&self, prompt: &PromptText, query: &Query, window: &[Passage]) -> Result<WindowOutcome> {
        let request = self.request(prompt, query, window)?;
        self.stats.windows.fetch_add(1, Ordering::Relaxed);
        let response = match self.client.complete(&request) {
            Ok(r) => r.text,
            Err(e) if self.settings.on_error == ErrorPolicy::Identity && !matches!(e, Error::CacheMiss { .. }) => {
                log::warn!("query {}: window of {} kept in place after error: {e}", query.id, window.len());
                self.stats.errors.fetch_add(1, Ordering::Relaxed);
                return Ok(WindowOutcome {
                    permutation: Permutation::identity(window.len()),
                    response: String::new(),
                });
            }
            Err(e) => return Err(e),
        };
        let permutation = parse_permutation(&response, window.len());
        if permutation.repaired {
            self.stats.repaired.fetch_add(1, Ordering::Relaxed);
        }
        if permutation.fallback {
            self.stats.fallbacks.fetch_add(1, Ordering::Relaxed);
            log::debug!("query {}: unusable ranking answer, identity used", query.id);
        }
        Ok(WindowOutcome { permutation, response })
    }

    /// Reorders `candidates` window by window, tail first; returns passage ids.
    pub fn rerank_topk(
        &self,
        prompt: &PromptText,
        query: &Query,
        candidates: &[Passage],
        plan: WindowPlan,
    ) -> Result<Vec<String>> {
        if candidates.is_empty() {
            return Err(Error::validation(format!("query {}: no candidates to rerank", query.id)));
        }
        plan.validate()?;
        let mut order: Vec<Passage> = candidates.to_vec();
        for start in plan.starts(order.len()) {
            let end = (start + plan.window_size).min(order.len());
            let outcome = self.rerank_window(prompt, query, &order[start..end])?;
            let reordered = outcome.permutation.apply(&order[start..end]);
            order.splice(start..end, reordered);
        }
        Ok(order.into_iter().map(|p| p.id).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn passages(n: usize) -> Vec<Passage> {
        (0..n).map(|i| Passage::new(format!("d{i}"), format!("text {i}"))).collect()
    }

    fn prompt() -> PromptText {
        PromptText::new("Rank them.", "t", PromptOrigin::User).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_permutation("[2] > [1] > [3]", 3).order, vec![2, 1, 3]);
        assert!(!parse_permutation("[2] > [1] > [3]", 3).repaired);
        let p = parse_permutation("[2] > [2] > [7] > [4]", 4);
        assert_eq!(p.order, vec![2, 4, 1, 3]);
        assert!(p.repaired && !p.fallback);
        let p = parse_permutation("no ranking given", 3);
        assert_eq!(p.order, vec![1, 2, 3]);
        assert!(p.repaired && p.fallback);
        assert_eq!(parse_permutation("3, 1", 3).order, vec![3, 1, 2]);
        assert_eq!(parse_permutation("[99999999999999999999999] > [1]", 2).order, vec![1, 2]);
    }

    #[test]
    fn render_layout() {
        let q = Query::new("q1", "what  is\nrust");
        let msgs = render_listwise_prompt(&prompt(), &q, &passages(3), 300).unwrap();
        assert_eq!(msgs[0].content, "Rank them.");
        let user = &msgs[1].content;
        for i in 1..=3 {
            assert_eq!(user.matches(&format!("[{i}]")).count(), 1, "{user}");
        }
        assert!(user.contains("Query: what is rust"));
        assert!(user.trim_end().ends_with("exactly once."));
        assert_eq!(msgs, render_listwise_prompt(&prompt(), &q, &passages(3), 300).unwrap());
    }

    #[test]
    fn render_truncates_and_rejects_empty() {
        let long = Passage::new("d", vec!["w"; 1000].join(" "));
        let msgs = render_listwise_prompt(&prompt(), &Query::new("q", "x"), &[long], 300).unwrap();
        let line = msgs[1].content.lines().find(|l| l.starts_with("[1] ")).unwrap();
        assert_eq!(line.split_whitespace().count() - 1, 300);
        assert!(render_listwise_prompt(&prompt(), &Query::new("q", "x"), &[], 300).is_err());
        assert!(render_listwise_prompt(&prompt(), &Query::new("q", "x"), &passages(101), 300).is_err());
    }

    #[test]
    fn window_starts() {
        let plan = WindowPlan::default();
        assert_eq!(plan.starts(100), vec![80, 70, 60, 50, 40, 30, 20, 10, 0]);
        assert_eq!(plan.starts(20), vec![0]);
        assert_eq!(plan.starts(7), vec![0]);
        assert_eq!(plan.starts(25), vec![5, 0]);
        assert!(WindowPlan::new(20, 0).is_err());
        assert!(WindowPlan::new(10, 20).is_err());
    }

    #[test]
    fn scripted_window() {
        let client = LlmClient::new(Arc::new(ScriptedBackend::fixed("[3] > [1] > [2]")));
        let r = Reranker::new(&client, RerankSettings::new("m"));
        let out = r.rerank_window(&prompt(), &Query::new("q", "x"), &passages(3)).unwrap();
        assert_eq!(out.permutation.order, vec![3, 1, 2]);

        let client = LlmClient::new(Arc::new(ScriptedBackend::fixed("I cannot help")));
        let r = Reranker::new(&client, RerankSettings::new("m"));
        let out = r.rerank_window(&prompt(), &Query::new("q", "x"), &passages(3)).unwrap();
        assert_eq!(out.permutation.order, vec![1, 2, 3]);
        assert_eq!(r.stats().fallbacks, 1);
    }

    #[test]
    fn error_policy() {
        let backend = Arc::new(ScriptedBackend::from_fn(|_| Err(Error::Api { status: 400, body: "no".into() })));
        let client = LlmClient::new(backend);
        let r = Reranker::new(&client, RerankSettings::new("m"));
        assert!(r.rerank_topk(&prompt(), &Query::new("q", "x"), &passages(5), WindowPlan::default()).is_err());
        let mut s = RerankSettings::new("m");
        s.on_error = ErrorPolicy::Identity;
        let r = Reranker::new(&client, s);
        let ids = r.rerank_topk(&prompt(), &Query::new("q", "x"), &passages(5), WindowPlan::default()).unwrap();
        assert_eq!(ids, vec!["d0", "d1", "d2", "d3", "d4"]);
        assert_eq!(r.stats().errors, 1);
    }

    #[test]
    fn identity_backend_keeps_order_and_counts_calls() {
        let backend = Arc::new(ScriptedBackend::fixed("nothing"));
        let client = LlmClient::new(backend.clone());
        let r = Reranker::new(&client, RerankSettings::new("m"));
        let cands = passages(100);
        let ids = r.rerank_topk(&prompt(), &Query::new("q", "x"), &cands, WindowPlan::default()).unwrap();
        assert_eq!(ids, cands.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
        assert_eq!(backend.calls(), 9);
    }

    proptest! {
        #[test]
        fn parse_is_total(text in ".{0,80}", l in 1usize..40) {
            let p = parse_permutation(&text, l);
            let mut sorted = p.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (1..=l).collect::<Vec<_>>());
        }

        #[test]
        fn parse_valid_is_unchanged(order in Just((1..=12usize).collect::<Vec<_>>()).prop_shuffle()) {
            let p = Permutation { order: order.clone(), repaired: false, fallback: false };
            let back = parse_permutation(&p.render(), 12);
            prop_assert_eq!(back.order, order);
            prop_assert!(!back.repaired);
        }
    }
}
