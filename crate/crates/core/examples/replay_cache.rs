//! Record completions into a JSONL cache, then replay them offline.
//! A replay client never reaches a backend: unknown requests fail with a
//! cache miss instead.

use std::sync::Arc;

use apeer::llm::{ChatMessage, LlmClient, LlmRequest, ResponseCache, ScriptedBackend};
use apeer::Error;

fn main() -> apeer::Result<()> {
    let path = std::env::temp_dir().join("apeer-replay-example.jsonl");
    let _ = std::fs::remove_file(&path);

    let request = |q: &str| LlmRequest::new("demo", vec![ChatMessage::user(q)]);

    let recording = LlmClient::new(Arc::new(ScriptedBackend::new(vec!["[2] > [1]".into(), "[1] > [2]".into()])))
        .with_cache(Arc::new(ResponseCache::open(&path)?));
    for q in ["first", "second", "first"] {
        let r = recording.complete(&request(q))?;
        println!("record {q:<6} -> {}", r.text);
    }
    println!(
        "backend calls {}, cache hits {}",
        recording.stats().backend_calls(),
        recording.stats().cache_hits()
    );

    let replay = LlmClient::replay(Arc::new(ResponseCache::open_read_only(&path)?));
    println!("replay first  -> {}", replay.complete(&request("first"))?.text);
    match replay.complete(&request("third")) {
        Err(Error::CacheMiss { key }) => println!("replay third  -> cache miss ({}...)", &key[..12]),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
