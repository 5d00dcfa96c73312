//! Talk to an OpenAI-compatible chat completions endpoint.
//!
//! APEER_API_KEY=... cargo run --example http_backend -- https://api.openai.com/v1 gpt-4
//!
//! Without a key the example reports the missing variable and exits cleanly.

use std::sync::Arc;
use std::time::Duration;

use apeer::llm::{HttpBackend, LlmClient, ResponseCache, RetryPolicy};
use apeer::prompt::manual_prompt;
use apeer::corpus::{Passage, Query};
use apeer::reranker::{RerankSettings, Reranker};
use apeer::Error;

fn main() -> apeer::Result<()> {
    let mut args = std::env::args().skip(1);
    let endpoint = args.next().unwrap_or_else(|| "https://api.openai.com/v1".into());
    let model = args.next().unwrap_or_else(|| "gpt-4".into());

    let backend = match HttpBackend::from_env(&endpoint, Duration::from_secs(60)) {
        Ok(b) => b,
        Err(e @ Error::MissingEnv(_)) => {
            println!("{e}; skipping the live call");
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    println!("posting to {}", backend.url());
    let client = LlmClient::new(Arc::new(backend))
        .with_retry(RetryPolicy::default())
        .with_cache(Arc::new(ResponseCache::open(std::env::temp_dir().join("apeer-http-cache.jsonl"))?));
    let reranker = Reranker::new(&client, RerankSettings::new(model));

    let query = Query::new("q1", "how do bees make honey");
    let window = vec![
        Passage::new("a", "Honey bees forage nectar and store it in wax cells."),
        Passage::new("b", "The stock market closed higher on Friday."),
        Passage::new("c", "Bees evaporate nectar by fanning their wings until it thickens into honey."),
    ];
    let outcome = reranker.rerank_window(&manual_prompt(), &query, &window)?;
    println!("model said: {}", outcome.response.trim());
    for p in outcome.permutation.apply(&window) {
        println!("  {} {}", p.id, p.text);
    }
    Ok(())
}
