//! The pipeline steps behind each subcommand, callable as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::{make_cot, make_paraphrase};
use crate::config::RunConfig;
use crate::corpus::{Corpus, Passage};
use crate::dataset::{build_datasets, DatasetConfig, TrainingDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_run, EvalOptions, TrecRun};
use crate::optimizer::{Optimizer, PromptRecord, RunDir, RunState};
use crate::prompt::{manual_prompt, MetaPrompts, PromptFile, PromptText};
use crate::report::{Report, ReportRow};
use crate::reranker::Reranker;
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSummary {
    pub dataset: String,
    pub docs: usize,
    pub terms: usize,
    pub avg_doc_length: f64,
    pub path: PathBuf,
    /// SHA-256 of the written index file.
    pub digest: String,
}

impl IndexSummary {
    pub fn line(&self) -> String {
        format!(
            "indexed {}: {} docs, {} terms, avgdl {:.2} -> {} (sha256 {})",
            self.dataset,
            self.docs,
            self.terms,
            self.avg_doc_length,
            self.path.display(),
            self.digest
        )
    }
}

fn load_index(config: &RunConfig, dataset: &str, corpus: &Corpus) -> Result<InvertedIndex> {
    let path = config.index_path(dataset);
    if path.exists() {
        let index = InvertedIndex::load(&path)?;
        if index.doc_count() == corpus.collection.len() {
            return Ok(index);
        }
        log::warn!("{} does not match the collection; rebuilding in memory", path.display());
    }
    InvertedIndex::build(&corpus.collection, Bm25Params::default())
}

pub fn cmd_index(config: &RunConfig) -> Result<IndexSummary> {
    config.validate()?;
    let name = config.dataset.clone();
    let paths = config.dataset_paths(&name)?;
    let corpus = paths.load()?;
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default())?;
    let path = config.index_path(&name);
    index.save(&path)?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(IndexSummary {
        dataset: name,
        docs: index.doc_count(),
        terms: index.term_count(),
        avg_doc_length: index.avg_doc_length(),
        path,
        digest: sha256_hex(&bytes),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub train: usize,
    pub val: usize,
}

fn dataset_files(config: &RunConfig) -> (PathBuf, PathBuf) {
    let dir = config.dataset_dir(&config.dataset);
    (dir.join("train.jsonl"), dir.join("val.jsonl"))
}

fn build_and_save(config: &RunConfig, corpus: &Corpus) -> Result<(TrainingDataset, TrainingDataset, DatasetSummary)> {
    let index = load_index(config, &config.dataset, corpus)?;
    let dc = DatasetConfig {
        validation: config.build.validation,
        ..DatasetConfig::new(config.build.n, config.seed)
    };
    let (train, val) = build_datasets(&corpus.queries, &corpus.qrels, &index, &corpus.collection, &dc)?;
    let (train_path, val_path) = dataset_files(config);
    train.save(&train_path)?;
    val.save(&val_path)?;
    let summary = DatasetSummary {
        train_path,
        val_path,
        train: train.len(),
        val: val.len(),
    };
    Ok((train, val, summary))
}

pub fn cmd_build_dataset(config: &RunConfig) -> Result<DatasetSummary> {
    config.validate()?;
    let corpus = config.dataset_paths(&config.dataset)?.load()?;
    Ok(build_and_save(config, &corpus)?.2)
}

fn load_meta(config: &RunConfig) -> Result<MetaPrompts> {
    match &config.meta_prompts {
        Some(dir) => MetaPrompts::load_dir(dir),
        None => Ok(MetaPrompts::default()),
    }
}

fn load_manual(config: &RunConfig) -> Result<PromptText> {
    match &config.manual_prompt {
        Some(p) => Ok(PromptFile::load(p)?.prompt),
        None => Ok(manual_prompt()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub best: PromptRecord,
    pub best_path: PathBuf,
    pub run_dir: PathBuf,
    pub state: RunState,
}

/// Runs (or resumes) the prompt search in `output_dir`.
pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeSummary> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let snapshot = out.join("config.toml");
    fs::write(&snapshot, config.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;

    let corpus = config.dataset_paths(&config.dataset)?.load()?;
    let (train_path, val_path) = dataset_files(config);
    let (train, val) = match (TrainingDataset::load(&train_path), TrainingDataset::load(&val_path)) {
        (Ok(t), Ok(v)) if t.seed == config.seed && t.len() == config.build.n => (t, v),
        _ => {
            let (t, v, _) = build_and_save(config, &corpus)?;
            (t, v)
        }
    };
    let client = config.client(&[&corpus])?;
    let reranker = Reranker::new(&client, config.rerank_settings());
    let run_dir = RunDir::new(out);
    let optimizer = Optimizer::new(&reranker, load_meta(config)?, config.optimizer_config())?.with_run_dir(run_dir.clone());
    let outcome = optimizer.run(&train, &val, &load_manual(config)?)?;
    Ok(OptimizeSummary {
        best: outcome.best,
        best_path: run_dir.best_prompt(),
        run_dir: out.clone(),
        state: outcome.state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: Report,
    pub report_dir: PathBuf,
    pub run_files: Vec<PathBuf>,
}

fn run_file_name(label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.trec")
}

/// BM25 first stage followed by listwise reranking with every prompt.
#[allow(clippy::too_many_arguments)]
fn evaluate_prompts(
    config: &RunConfig,
    dataset: &str,
    prompts: &[PromptText],
    title: &str,
    notes: Vec<(String, String)>,
    report_dir: &Path,
    client: &crate::llm::LlmClient,
    corpus: &Corpus,
) -> Result<EvalOutcome> {
    let mut labels: Vec<&str> = prompts.iter().map(|p| p.label.as_str()).collect();
    labels.push("BM25");
    labels.sort_unstable();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::validation(format!("two evaluated prompts share the label {:?}", w[0])));
    }
    let index = load_index(config, dataset, corpus)?;
    let options = EvalOptions {
        include_zero_positive: config.evaluate.include_zero_positive,
    };
    let mut queries: Vec<_> = corpus
        .queries
        .iter()
        .filter(|q| corpus.qrels.contains_query(&q.id))
        .filter(|q| options.include_zero_positive || corpus.qrels.num_positives(&q.id) > 0)
        .collect();
    queries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(m) = config.evaluate.max_queries {
        queries.truncate(m);
    }
    if queries.is_empty() {
        return Err(Error::validation(format!("dataset {dataset} has no judged query to evaluate")));
    }
    let candidates: Vec<Vec<Passage>> = queries
        .par_iter()
        .map(|q| {
            let hits = index.search(&q.text, config.rerank.depth)?;
            Ok(hits
                .iter()
                .filter_map(|h| corpus.collection.get(&h.passage_id).cloned())
                .collect())
        })
        .collect::<Result<_>>()?;

    let cutoffs = &config.evaluate.cutoffs;
    let mut rows = Vec::new();
    let mut run_files = Vec::new();
    let runs_dir = report_dir.join("runs");
    let mut score = |label: &str, origin: &str, ranked: Vec<Vec<String>>| -> Result<()> {
        let mut run = BTreeMap::new();
        let mut trec = TrecRun::new(label);
        for (q, ids) in queries.iter().zip(ranked) {
            trec.insert_ranking(&q.id, &ids);
            run.insert(q.id.clone(), ids);
        }
        let eval = evaluate_run(&run, &corpus.qrels, cutoffs, options)?;
        let path = runs_dir.join(run_file_name(label));
        trec.save(&path)?;
        run_files.push(path);
        rows.push(ReportRow {
            label: label.to_string(),
            origin: origin.to_string(),
            values: cutoffs.iter().map(|&k| eval.mean(k).unwrap_or(0.0)).collect(),
        });
        Ok(())
    };
    let bm25: Vec<Vec<String>> = candidates
        .iter()
        .map(|c| c.iter().map(|p| p.id.clone()).collect())
        .collect();
    score("BM25", "-", bm25)?;

    let plan = config.rerank.plan();
    for prompt in prompts {
        let reranker = Reranker::new(client, config.rerank_settings());
        let ranked: Vec<Vec<String>> = queries
            .par_iter()
            .zip(candidates.par_iter())
            .map(|(q, cands)| {
                if cands.is_empty() {
                    Ok(Vec::new())
                } else {
                    reranker.rerank_topk(prompt, q, cands, plan)
                }
            })
            .collect::<Result<_>>()?;
        let stats = reranker.stats();
        if stats.repaired > 0 || stats.errors > 0 {
            log::info!(
                "{}: {} windows, {} repaired, {} unusable, {} failed",
                prompt.label,
                stats.windows,
                stats.repaired,
                stats.fallbacks,
                stats.errors
            );
        }
        score(&prompt.label, prompt.origin.as_str(), ranked)?;
    }
    let report = Report {
        title: title.to_string(),
        dataset: dataset.to_string(),
        num_queries: queries.len(),
        cutoffs: cutoffs.clone(),
        rows,
        notes,
    };
    report.save(report_dir, "report")?;
    Ok(EvalOutcome {
        report,
        report_dir: report_dir.to_path_buf(),
        run_files,
    })
}

fn load_prompt_file(path: &Path) -> Result<PromptFile> {
    if !path.exists() {
        return Err(Error::Config(format!("prompt file {} does not exist", path.display())));
    }
    PromptFile::load(path)
}

/// Scores the baselines and every given prompt file on `dataset` (default: the configured one).
pub fn cmd_evaluate(config: &RunConfig, prompt_files: &[PathBuf], dataset: Option<&str>) -> Result<EvalOutcome> {
    config.validate()?;
    let name = dataset.unwrap_or(&config.dataset).to_string();
    let files: Vec<PromptFile> = prompt_files.iter().map(|p| load_prompt_file(p)).collect::<Result<_>>()?;
    let corpus = config.dataset_paths(&name)?.load()?;
    let client = config.client(&[&corpus])?;
    let mut prompts = Vec::new();
    if config.evaluate.baselines {
        let manual = load_manual(config)?;
        prompts.push(PromptText {
            label: "manual".into(),
            ..manual.clone()
        });
        prompts.push(make_cot(&manual)?);
        prompts.push(make_paraphrase(&client, &config.rerank_settings(), &load_meta(config)?, &manual)?);
    }
    let mut notes = Vec::new();
    for (f, path) in files.iter().zip(prompt_files) {
        notes.push((format!("prompt {}", f.prompt.label), path.display().to_string()));
        prompts.push(f.prompt.clone());
    }
    let dir = config.output_dir.join("reports").join(format!("evaluate-{name}"));
    evaluate_prompts(config, &name, &prompts, "Reranking evaluation", notes, &dir, &client, &corpus)
}

/// Scores a prompt optimized elsewhere on `target` next to the manual prompt, without re-optimizing.
pub fn cmd_transfer(config: &RunConfig, prompt_file: &Path, target: &str) -> Result<EvalOutcome> {
    config.validate()?;
    let file = load_prompt_file(prompt_file)?;
    let corpus = config.dataset_paths(target)?.load()?;
    let client = config.client(&[&corpus])?;
    let manual = PromptText {
        label: "manual".into(),
        ..load_manual(config)?
    };
    let mut notes = vec![("prompt file".to_string(), prompt_file.display().to_string())];
    let extra = &file.meta.extra;
    for key in ["source_run", "record", "score"] {
        if let Some(v) = extra.get(key) {
            let shown = v.as_str().map_or_else(|| v.to_string(), str::to_string);
            notes.push((format!("source {key}"), shown));
        }
    }
    let dir = config.output_dir.join("reports").join(format!("transfer-{target}"));
    evaluate_prompts(
        config,
        target,
        &[manual, file.prompt.clone()],
        "Transfer evaluation",
        notes,
        &dir,
        &client,
        &corpus,
    )
}
