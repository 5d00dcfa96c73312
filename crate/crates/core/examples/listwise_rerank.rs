//! Sliding-window listwise reranking of BM25 candidates.
//!
//! The simulated backend ranks perfectly once the instruction names all of its
//! feature phrases, and progressively worse the fewer it names.

use std::sync::Arc;

use apeer::llm::LlmClient;
use apeer::metrics::ndcg_at_k;
use apeer::oracle::{OracleBackend, OracleConfig, OracleWorld, DEFAULT_FEATURE_PHRASES};
use apeer::prompt::{manual_prompt, PromptOrigin, PromptText};
use apeer::reranker::{parse_permutation, RerankSettings, Reranker, WindowPlan};
use apeer::retrieval::{Bm25Params, InvertedIndex};
use apeer::synth::{generate, SynthConfig};

fn main() -> apeer::Result<()> {
    println!("repair: {:?}", parse_permutation("[2] > [2] > [7] > [4]", 4).order);

    let corpus = generate(&SynthConfig::new(5000, 200, 1))?;
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default())?;
    let mut world = OracleWorld::new(OracleConfig::default())?;
    world.register_qrels(&corpus.queries, &corpus.collection, &corpus.qrels);
    let client = LlmClient::new(Arc::new(OracleBackend::new(world)));
    let reranker = Reranker::new(&client, RerankSettings::new("oracle"));

    let manual = manual_prompt();
    let tuned = PromptText::new(
        format!("{}\n{}.", manual.text, DEFAULT_FEATURE_PHRASES.join(". ")),
        "tuned",
        PromptOrigin::User,
    )?;

    let query = &corpus.queries[3];
    let grades = corpus.qrels.for_query(&query.id).cloned().unwrap_or_default();
    let candidates: Vec<_> = index
        .search(&query.text, 100)?
        .iter()
        .filter_map(|h| corpus.collection.get(&h.passage_id).cloned())
        .collect();
    let bm25: Vec<&str> = candidates.iter().map(|p| p.id.as_str()).collect();
    println!("query {} {:?}", query.id, query.text);
    println!("  BM25    nDCG@10 {:.4}", ndcg_at_k(&bm25, &grades, 10)?);
    for prompt in [&manual, &tuned] {
        let ids = reranker.rerank_topk(prompt, query, &candidates, WindowPlan::default())?;
        println!("  {:<7} nDCG@10 {:.4}", prompt.label, ndcg_at_k(&ids, &grades, 10)?);
    }
    println!("backend calls: {}", client.stats().backend_calls());
    Ok(())
}
