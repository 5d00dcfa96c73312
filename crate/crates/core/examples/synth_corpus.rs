//! Writes a synthetic corpus (queries.tsv, collection.tsv, qrels.txt) that the
//! `apeer` binary can index, sample and evaluate.
//!
//! cargo run --example synth_corpus -- data/synth-a 5000 200 1

use apeer::synth::{generate, write, SynthConfig};

fn main() -> apeer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().map_or("data/synth", String::as_str);
    let passages = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let queries = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let corpus = generate(&SynthConfig::new(passages, queries, seed))?;
    write(&corpus, dir)?;
    println!(
        "{dir}: {} passages, {} queries, {} judgments",
        corpus.collection.len(),
        corpus.queries.len(),
        corpus.qrels.len()
    );
    Ok(())
}
