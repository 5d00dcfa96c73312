//! The full prompt search against the simulated backend, with checkpoints,
//! prompt files and an event log written to a run directory.
//!
//! cargo run --release --example optimize_oracle -- /tmp/apeer-run

use std::sync::Arc;

use apeer::dataset::{build_datasets, DatasetConfig};
use apeer::llm::{LlmClient, ResponseCache};
use apeer::optimizer::{Optimizer, OptimizerConfig, RecordOrigin, RunDir};
use apeer::oracle::{OracleBackend, OracleConfig, OracleWorld};
use apeer::prompt::{manual_prompt, MetaPrompts};
use apeer::reranker::{RerankSettings, Reranker};
use apeer::retrieval::{Bm25Params, InvertedIndex};
use apeer::synth::{generate, SynthConfig};

fn main() -> apeer::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("apeer-optimize-example"), Into::into);
    let _ = std::fs::remove_dir_all(&root);
    let run_dir = RunDir::new(&root);

    let corpus = generate(&SynthConfig::new(5000, 200, 1))?;
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default())?;
    let (train, val) = build_datasets(
        &corpus.queries,
        &corpus.qrels,
        &index,
        &corpus.collection,
        &DatasetConfig::new(100, 42),
    )?;

    let mut world = OracleWorld::new(OracleConfig::default())?;
    world.register_qrels(&corpus.queries, &corpus.collection, &corpus.qrels);
    let client = LlmClient::new(Arc::new(OracleBackend::new(world)))
        .with_cache(Arc::new(ResponseCache::open(run_dir.cache_file())?));
    let reranker = Reranker::new(&client, RerankSettings::new("oracle"));

    let config = OptimizerConfig {
        seed: 42,
        ..OptimizerConfig::default()
    };
    let optimizer = Optimizer::new(&reranker, MetaPrompts::default(), config)?.with_run_dir(run_dir.clone());
    let outcome = optimizer.run(&train, &val, &manual_prompt())?;

    let h = &outcome.state.histories;
    println!("initial score {:.4}", h.init_score);
    for r in h.records() {
        println!("  {:<16} {:<14?} {:.4}", r.id, r.origin, r.score.unwrap_or(0.0));
    }
    println!(
        "feedback/preference records: {}/{}",
        h.count(RecordOrigin::Feedback),
        h.count(RecordOrigin::Preference)
    );
    println!("\nbest {} ({:.4}):\n{}", outcome.best.id, outcome.best.score.unwrap_or(0.0), outcome.best.prompt.text);
    println!("\nrun directory: {}", root.display());
    Ok(())
}
