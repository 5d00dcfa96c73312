//! Prompt search with textual feedback and preference steering.
//!
//! Two histories hold every scored prompt: those beating the initial prompt's
//! validation score and those that do not. Each epoch critiques the current
//! best prompt on a small training batch, rewrites it from the critique, and
//! then rewrites the result once more towards the best positive and away from
//! the worst negative prompt seen so far.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TrainingDataset, TrainingInstance};
use crate::error::{Error, Result};
use crate::llm::{ChatMessage, LlmRequest};
use crate::metrics::ndcg_at_k;
use crate::prompt::{extract_delimited, MetaPrompts, PromptFile, PromptOrigin, PromptText};
use crate::reranker::{Permutation, Reranker};
use crate::util::{derive_seed, seeded_rng, truncate_words};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOrigin {
    InitPositive,
    InitNegative,
    Feedback,
    Preference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: PromptText,
    pub score: Option<f64>,
    pub origin: RecordOrigin,
    pub parent_ids: Vec<String>,
    pub epoch: usize,
    /// Logical creation sequence number within the run.
    pub created_at: u64,
}

impl PromptRecord {
    fn scored(&self) -> f64 {
        self.score.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum History {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptHistories {
    pub positives: Vec<PromptRecord>,
    pub negatives: Vec<PromptRecord>,
    pub init_score: f64,
}

impl PromptHistories {
    pub fn seeded(positive: PromptRecord, negative: PromptRecord) -> Result<Self> {
        let init_score = positive
            .score
            .ok_or_else(|| Error::validation("initial positive prompt is unscored"))?;
        if negative.score.is_none() {
            return Err(Error::validation("initial negative prompt is unscored"));
        }
        Ok(Self {
            positives: vec![positive],
            negatives: vec![negative],
            init_score,
        })
    }

    /// Highest score, earliest created on ties.
    pub fn best_positive(&self) -> &PromptRecord {
        self.positives
            .iter()
            .reduce(|best, r| if r.scored() > best.scored() { r } else { best })
            .expect("positive history is never empty")
    }

    pub fn max_positive_score(&self) -> f64 {
        self.best_positive().scored()
    }

    pub fn records(&self) -> impl Iterator<Item = &PromptRecord> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn count(&self, origin: RecordOrigin) -> usize {
        self.records().filter(|r| r.origin == origin).count()
    }

    pub fn find(&self, id: &str) -> Option<&PromptRecord> {
        self.records().find(|r| r.id == id)
    }
}

/// Files a scored record: strictly above the initial score is positive, anything else negative.
pub fn classify_prompt(histories: &mut PromptHistories, record: PromptRecord) -> Result<History> {
    let score = record
        .score
        .ok_or_else(|| Error::validation(format!("record {} is unscored", record.id)))?;
    if histories.find(&record.id).is_some() {
        return Err(Error::validation(format!("record {} is already filed", record.id)));
    }
    if score > histories.init_score {
        histories.positives.push(record);
        Ok(History::Positive)
    } else {
        histories.negatives.push(record);
        Ok(History::Negative)
    }
}

/// Pairs the top `t` positives with the bottom `t` negatives.
pub fn select_demo_pairs(histories: &PromptHistories, t: usize) -> Result<Vec<(PromptRecord, PromptRecord)>> {
    if histories.positives.is_empty() || histories.negatives.is_empty() {
        return Err(Error::validation("both histories must be non-empty to select demonstrations"));
    }
    let mut pos: Vec<&PromptRecord> = histories.positives.iter().collect();
    pos.sort_by(|a, b| b.scored().total_cmp(&a.scored()).then(a.created_at.cmp(&b.created_at)));
    let mut neg: Vec<&PromptRecord> = histories.negatives.iter().collect();
    neg.sort_by(|a, b| a.scored().total_cmp(&b.scored()).then(a.created_at.cmp(&b.created_at)));
    Ok(pos
        .into_iter()
        .zip(neg)
        .take(t)
        .map(|(p, n)| (p.clone(), n.clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::one")]
    pub batch_size: usize,
    #[serde(default = "defaults::one")]
    pub demo_pairs: usize,
    #[serde(default = "defaults::cutoff")]
    pub cutoff: usize,
    /// Number of drafted prompts from which the initial negative is picked.
    #[serde(default = "defaults::candidates")]
    pub generated_candidates: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        3
    }
    pub fn one() -> usize {
        1
    }
    pub fn cutoff() -> usize {
        10
    }
    pub fn candidates() -> usize {
        4
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            batch_size: 1,
            demo_pairs: 1,
            cutoff: defaults::cutoff(),
            generated_candidates: defaults::candidates(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("demo_pairs", self.demo_pairs),
            ("cutoff", self.cutoff),
            ("generated_candidates", self.generated_candidates),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("optimizer {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Scored {
        epoch: usize,
        id: String,
        origin: RecordOrigin,
        score: f64,
        history: Option<History>,
    },
    InitNegativeChosen {
        id: String,
        score: f64,
        all_outscore_manual: bool,
    },
    BatchSampled {
        epoch: usize,
        query_ids: Vec<String>,
    },
    Feedback {
        epoch: usize,
        query_id: String,
        text: String,
    },
    PreferenceFromSeedOnly {
        epoch: usize,
    },
    Skipped {
        epoch: usize,
        step: String,
        reason: String,
    },
    EpochFinished {
        epoch: usize,
        best_id: String,
        best_score: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: OptimizerConfig,
    pub histories: PromptHistories,
    /// Number of completed epochs.
    pub epoch: usize,
    pub next_seq: u64,
    pub events: Vec<Event>,
}

impl RunState {
    pub fn best(&self) -> &PromptRecord {
        self.histories.best_positive()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// On-disk layout of one optimization run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state_dir(&self) -> PathBuf {
        self.root.join("state")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.state_dir().join(format!("epoch-{epoch}.json"))
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.root.join("prompts")
    }

    pub fn events_log(&self) -> PathBuf {
        self.root.join("events.log")
    }

    pub fn cache_file(&self) -> PathBuf {
        self.root.join("cache").join("llm.jsonl")
    }

    pub fn best_prompt(&self) -> PathBuf {
        self.root.join("best_prompt.txt")
    }

    /// The checkpoint with the highest epoch number, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(usize, PathBuf)>> {
        let dir = self.state_dir();
        if !dir.exists() {
            return Ok(None);
        }
        let mut best = None;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch-")?.strip_suffix(".json")?.parse::<usize>().ok());
            if let Some(e) = epoch {
                if best.as_ref().is_none_or(|(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        Ok(best)
    }
}

/// Mean nDCG@`cutoff` of single-window reranking over every instance.
pub fn evaluate_prompt(reranker: &Reranker<'_>, prompt: &PromptText, dataset: &TrainingDataset, cutoff: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let scores = dataset
        .instances
        .par_iter()
        .map(|inst| {
            let out = reranker.rerank_window(prompt, &inst.query, &inst.candidates)?;
            let ids = out.permutation.apply(&inst.candidates);
            let ids: Vec<&str> = ids.iter().map(|p| p.id.as_str()).collect();
            ndcg_at_k(&ids, &inst.relevance, cutoff)
        })
        .collect::<Vec<_>>();
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / dataset.len() as f64)
}

fn meta_request(reranker: &Reranker<'_>, user: String) -> LlmRequest {
    let s = reranker.settings();
    LlmRequest::new(s.model.clone(), vec![ChatMessage::user(user)])
        .with_temperature(s.temperature)
        .with_max_output_tokens(s.max_output_tokens)
}

/// One call plus one retry when `accept` rejects the answer; the retry
/// carries an attempt marker so a cached first answer is not replayed.
fn call_with_one_retry<T>(
    reranker: &Reranker<'_>,
    user: String,
    accept: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    let first = reranker.client().complete(&meta_request(reranker, user.clone()))?;
    if let Some(v) = accept(&first.text) {
        return Ok(Some(v));
    }
    let second = reranker
        .client()
        .complete(&meta_request(reranker, format!("{user}\n\n(attempt 2)")))?;
    Ok(accept(&second.text))
}

fn render_passages(instance: &TrainingInstance, max_words: usize) -> String {
    instance
        .candidates
        .iter()
        .enumerate()
        .map(|(i, p)| format!("[{}] {}", i + 1, truncate_words(&p.text, max_words)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_ideal_ranking(instance: &TrainingInstance) -> String {
    Permutation {
        order: instance.ideal_order(),
        repaired: false,
        fallback: false,
    }
    .render()
}

/// Critique of `prompt` given one ranked instance; empty when the model gave none.
pub fn generate_feedback(
    reranker: &Reranker<'_>,
    meta: &MetaPrompts,
    prompt: &PromptText,
    instance: &TrainingInstance,
    response: &str,
) -> Result<String> {
    let user = meta.feedback.fill(&[
        ("prompt", &prompt.text),
        ("query", &instance.query.text),
        ("passages", &render_passages(instance, reranker.settings().max_passage_words)),
        ("response", response.trim()),
        ("ideal_ranking", &render_ideal_ranking(instance)),
    ])?;
    let text = call_with_one_retry(reranker, user, |t| {
        let t = t.trim();
        (!t.is_empty()).then(|| t.to_string())
    })?;
    Ok(text.unwrap_or_default())
}

pub fn refine_prompt(
    reranker: &Reranker<'_>,
    meta: &MetaPrompts,
    prompt: &PromptText,
    feedbacks: &[String],
) -> Result<Option<PromptText>> {
    if feedbacks.iter().all(|f| f.trim().is_empty()) {
        return Err(Error::validation("refinement needs at least one non-empty feedback"));
    }
    let list = feedbacks
        .iter()
        .filter(|f| !f.trim().is_empty())
        .enumerate()
        .map(|(i, f)| format!("{}. {}", i + 1, f.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    let user = meta.refine.fill(&[("prompt", &prompt.text), ("feedback_list", &list)])?;
    let text = call_with_one_retry(reranker, user, extract_delimited)?;
    Ok(text.map(|t| PromptText {
        text: t,
        label: prompt.label.clone(),
        origin: PromptOrigin::Apeer,
    }))
}

fn render_examples(kind: &str, records: &[&PromptRecord]) -> String {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "{kind} example {} (validation score {:.4}):\n{}",
                i + 1,
                r.scored(),
                r.prompt.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn preference_optimize(
    reranker: &Reranker<'_>,
    meta: &MetaPrompts,
    prompt: &PromptText,
    pairs: &[(PromptRecord, PromptRecord)],
) -> Result<Option<PromptText>> {
    if pairs.is_empty() {
        return Err(Error::validation("preference step needs at least one demonstration pair"));
    }
    let pos: Vec<&PromptRecord> = pairs.iter().map(|(p, _)| p).collect();
    let neg: Vec<&PromptRecord> = pairs.iter().map(|(_, n)| n).collect();
    let user = meta.preference.fill(&[
        ("prompt", &prompt.text),
        ("positive_examples", &render_examples("Positive", &pos)),
        ("negative_examples", &render_examples("Negative", &neg)),
    ])?;
    let text = call_with_one_retry(reranker, user, extract_delimited)?;
    Ok(text.map(|t| PromptText {
        text: t,
        label: prompt.label.clone(),
        origin: PromptOrigin::Apeer,
    }))
}

/// Drives the whole search, checkpointing after initialization and after every epoch.
pub struct Optimizer<'a> {
    reranker: &'a Reranker<'a>,
    meta: MetaPrompts,
    config: OptimizerConfig,
    run_dir: Option<RunDir>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub best: PromptRecord,
    pub state: RunState,
}

impl<'a> Optimizer<'a> {
    pub fn new(reranker: &'a Reranker<'a>, meta: MetaPrompts, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            reranker,
            meta,
            config,
            run_dir: None,
        })
    }

    pub fn with_run_dir(mut self, dir: RunDir) -> Self {
        self.run_dir = Some(dir);
        self
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        seq: &mut u64,
        id: String,
        mut prompt: PromptText,
        origin: RecordOrigin,
        parent_ids: Vec<String>,
        epoch: usize,
        score: f64,
    ) -> Result<PromptRecord> {
        prompt.label = id.clone();
        let rec = PromptRecord {
            id,
            prompt,
            score: Some(score),
            origin,
            parent_ids,
            epoch,
            created_at: *seq,
        };
        *seq += 1;
        self.write_prompt(&rec)?;
        Ok(rec)
    }

    fn write_prompt(&self, rec: &PromptRecord) -> Result<()> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        PromptFile::new(rec.prompt.clone())
            .with_extra("id", rec.id.clone())
            .with_extra("record_origin", serde_json::to_value(rec.origin)?)
            .with_extra("score", rec.scored())
            .with_extra("epoch", rec.epoch)
            .with_extra("parents", rec.parent_ids.clone())
            .save(dir.prompts_dir().join(format!("{}.txt", rec.id)))
    }

    fn emit(&self, events: &mut Vec<Event>, log: &mut Option<File>, event: Event) -> Result<()> {
        if let (Some(f), Some(dir)) = (log.as_mut(), &self.run_dir) {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(dir.events_log(), e))?;
        }
        events.push(event);
        Ok(())
    }

    fn checkpoint(&self, state: &RunState) -> Result<()> {
        match &self.run_dir {
            Some(dir) => state.save(dir.checkpoint(state.epoch)),
            None => Ok(()),
        }
    }

    /// Rewrites the event log to match `events`, then keeps it open for appends.
    fn open_log(&self, events: &[Event]) -> Result<Option<File>> {
        let Some(dir) = &self.run_dir else { return Ok(None) };
        let path = dir.events_log();
        fs::create_dir_all(dir.root()).map_err(|e| Error::io(dir.root(), e))?;
        let mut buf = Vec::new();
        for e in events {
            buf.extend(serde_json::to_vec(e)?);
            buf.push(b'\n');
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        let f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Some(f))
    }

    /// Scores the manual prompt and a set of drafted prompts; the worst draft seeds the negatives.
    pub fn init_histories(&self, manual: &PromptText, val: &TrainingDataset) -> Result<RunState> {
        let mut seq = 0;
        let mut events = Vec::new();
        let mut log = self.open_log(&events)?;
        let cutoff = self.config.cutoff;
        let init_score = evaluate_prompt(self.reranker, manual, val, cutoff)?;
        let positive = self.record(
            &mut seq,
            "init-positive".into(),
            PromptText {
                origin: PromptOrigin::Manual,
                ..manual.clone()
            },
            RecordOrigin::InitPositive,
            vec![],
            0,
            init_score,
        )?;
        self.emit(&mut events, &mut log, Event::Scored {
            epoch: 0,
            id: positive.id.clone(),
            origin: positive.origin,
            score: init_score,
            history: Some(History::Positive),
        })?;
        let mut drafts: Vec<(PromptText, f64)> = Vec::new();
        for variant in 1..=self.config.generated_candidates {
            let user = self.meta.generate.fill(&[("variant", &variant.to_string())])?;
            let Some(text) = call_with_one_retry(self.reranker, user, extract_delimited)? else {
                log::warn!("drafted prompt {variant} was unusable; skipped");
                continue;
            };
            let p = PromptText {
                text,
                label: format!("draft-{variant}"),
                origin: PromptOrigin::Apeer,
            };
            let score = evaluate_prompt(self.reranker, &p, val, cutoff)?;
            self.emit(&mut events, &mut log, Event::Scored {
                epoch: 0,
                id: p.label.clone(),
                origin: RecordOrigin::InitNegative,
                score,
                history: None,
            })?;
            drafts.push((p, score));
        }
        let worst = drafts
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Protocol("no usable drafted prompt to seed the negative history".into()))?;
        let all_outscore = drafts.iter().all(|(_, s)| *s > init_score);
        if all_outscore {
            log::warn!("every drafted prompt outscores the manual prompt; taking the lowest as the negative seed");
        }
        let (p_neg, neg_score) = drafts.swap_remove(worst);
        let negative = self.record(
            &mut seq,
            "init-negative".into(),
            p_neg,
            RecordOrigin::InitNegative,
            vec![],
            0,
            neg_score,
        )?;
        self.emit(&mut events, &mut log, Event::InitNegativeChosen {
            id: negative.id.clone(),
            score: neg_score,
            all_outscore_manual: all_outscore,
        })?;
        let state = RunState {
            config: self.config.clone(),
            histories: PromptHistories::seeded(positive, negative)?,
            epoch: 0,
            next_seq: seq,
            events,
        };
        self.checkpoint(&state)?;
        Ok(state)
    }

    fn sample_batch<'d>(&self, train: &'d TrainingDataset, epoch: usize) -> Vec<&'d TrainingInstance> {
        let seed = derive_seed(&[b"batch", &self.config.seed.to_le_bytes(), &(epoch as u64).to_le_bytes()]);
        let mut rng = seeded_rng(seed);
        let k = self.config.batch_size.min(train.len());
        train.instances.choose_multiple(&mut rng, k).collect()
    }

    pub fn run_epoch(&self, state: &mut RunState, train: &TrainingDataset, val: &TrainingDataset) -> Result<()> {
        let epoch = state.epoch + 1;
        let mut log = self.open_log(&state.events)?;
        let mut events = std::mem::take(&mut state.events);
        let mut seq = state.next_seq;
        let result = self.epoch_body(epoch, &mut state.histories, &mut seq, &mut events, &mut log, train, val);
        if result.is_err() {
            state.events = events;
            return result;
        }
        let best = state.histories.best_positive();
        let finished = Event::EpochFinished {
            epoch,
            best_id: best.id.clone(),
            best_score: best.scored(),
        };
        self.emit(&mut events, &mut log, finished)?;
        state.events = events;
        state.next_seq = seq;
        state.epoch = epoch;
        self.checkpoint(state)
    }

    #[allow(clippy::too_many_arguments)]
    fn epoch_body(
        &self,
        epoch: usize,
        histories: &mut PromptHistories,
        seq: &mut u64,
        events: &mut Vec<Event>,
        log: &mut Option<File>,
        train: &TrainingDataset,
        val: &TrainingDataset,
    ) -> Result<()> {
        let cutoff = self.config.cutoff;
        let batch = self.sample_batch(train, epoch);
        self.emit(events, log, Event::BatchSampled {
            epoch,
            query_ids: batch.iter().map(|i| i.query.id.clone()).collect(),
        })?;
        let current = histories.best_positive().clone();
        let mut feedbacks = Vec::new();
        for inst in &batch {
            let out = self.reranker.rerank_window(&current.prompt, &inst.query, &inst.candidates)?;
            let fb = generate_feedback(self.reranker, &self.meta, &current.prompt, inst, &out.response)?;
            self.emit(events, log, Event::Feedback {
                epoch,
                query_id: inst.query.id.clone(),
                text: fb.clone(),
            })?;
            if !fb.is_empty() {
                feedbacks.push(fb);
            }
        }
        let skip = |events: &mut Vec<Event>, log: &mut Option<File>, reason: &str| -> Result<()> {
            log::warn!("epoch {epoch}: {reason}; feedback and preference steps skipped");
            for step in ["feedback", "preference"] {
                self.emit(events, log, Event::Skipped {
                    epoch,
                    step: step.into(),
                    reason: reason.into(),
                })?;
            }
            Ok(())
        };
        if feedbacks.is_empty() {
            return skip(events, log, "no usable feedback");
        }
        let Some(refined) = refine_prompt(self.reranker, &self.meta, &current.prompt, &feedbacks)? else {
            return skip(events, log, "refinement answer had no delimited prompt");
        };
        let score = evaluate_prompt(self.reranker, &refined, val, cutoff)?;
        let p_prime = self.record(
            seq,
            format!("e{epoch}-feedback"),
            refined,
            RecordOrigin::Feedback,
            vec![current.id.clone()],
            epoch,
            score,
        )?;
        let history = classify_prompt(histories, p_prime.clone())?;
        self.emit(events, log, Event::Scored {
            epoch,
            id: p_prime.id.clone(),
            origin: p_prime.origin,
            score,
            history: Some(history),
        })?;

        let pairs = select_demo_pairs(histories, self.config.demo_pairs)?;
        if histories.positives.len() == 1 {
            log::info!("epoch {epoch}: positive history holds only the seed prompt; using it as the demonstration");
            self.emit(events, log, Event::PreferenceFromSeedOnly { epoch })?;
        }
        let Some(steered) = preference_optimize(self.reranker, &self.meta, &p_prime.prompt, &pairs)? else {
            log::warn!("epoch {epoch}: preference answer had no delimited prompt; step skipped");
            return self.emit(events, log, Event::Skipped {
                epoch,
                step: "preference".into(),
                reason: "preference answer had no delimited prompt".into(),
            });
        };
        let score = evaluate_prompt(self.reranker, &steered, val, cutoff)?;
        let mut parents = vec![p_prime.id.clone()];
        for (p, n) in &pairs {
            parents.push(p.id.clone());
            parents.push(n.id.clone());
        }
        let p_second = self.record(
            seq,
            format!("e{epoch}-preference"),
            steered,
            RecordOrigin::Preference,
            parents,
            epoch,
            score,
        )?;
        let history = classify_prompt(histories, p_second.clone())?;
        self.emit(events, log, Event::Scored {
            epoch,
            id: p_second.id.clone(),
            origin: p_second.origin,
            score,
            history: Some(history),
        })
    }

    /// Starts fresh, or continues from the newest checkpoint in the run directory.
    pub fn run(&self, train: &TrainingDataset, val: &TrainingDataset, manual: &PromptText) -> Result<RunOutcome> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::validation("training and validation sets must be non-empty"));
        }
        let resumed = match &self.run_dir {
            Some(dir) => dir.latest_checkpoint()?,
            None => None,
        };
        let mut state = match resumed {
            Some((epoch, path)) => {
                let state = RunState::load(&path)?;
                if state.config != self.config {
                    return Err(Error::Config(format!(
                        "checkpoint {} was written with a different optimizer configuration",
                        path.display()
                    )));
                }
                log::info!("resuming after epoch {epoch} from {}", path.display());
                state
            }
            None => self.init_histories(manual, val)?,
        };
        while state.epoch < self.config.epochs {
            if let Err(e) = self.run_epoch(&mut state, train, val) {
                log::error!("epoch {} aborted: {e}", state.epoch + 1);
                return Err(e);
            }
            let best = state.best();
            log::info!(
                "epoch {}: best {} scores {:.4} (init {:.4})",
                state.epoch,
                best.id,
                best.scored(),
                state.histories.init_score
            );
        }
        let best = state.best().clone();
        if let Some(dir) = &self.run_dir {
            PromptFile::new(PromptText {
                label: "apeer".into(),
                origin: PromptOrigin::Apeer,
                ..best.prompt.clone()
            })
            .with_extra("record", best.id.clone())
            .with_extra("score", best.scored())
            .with_extra("source_run", dir.root().display().to_string())
            .save(dir.best_prompt())?;
        }
        Ok(RunOutcome { best, state })
    }
}
