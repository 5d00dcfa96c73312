//! Sample judged queries and assemble 20-candidate training instances.

use apeer::dataset::{build_datasets, DatasetConfig, ValidationMode};
use apeer::retrieval::{Bm25Params, InvertedIndex};
use apeer::synth::{generate, SynthConfig};

fn main() -> apeer::Result<()> {
    let corpus = generate(&SynthConfig::new(5000, 200, 1))?;
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default())?;

    let config = DatasetConfig {
        validation: ValidationMode::Disjoint { m: 20 },
        ..DatasetConfig::new(100, 42)
    };
    let (train, val) = build_datasets(&corpus.queries, &corpus.qrels, &index, &corpus.collection, &config)?;
    println!("train {} instances, val {} instances", train.len(), val.len());

    let inst = &train.instances[0];
    println!("query {} {:?}", inst.query.id, inst.query.text);
    for (i, p) in inst.candidates.iter().enumerate() {
        println!("  [{:>2}] {} grade {}", i + 1, p.id, inst.grade(&p.id));
    }
    let positives: usize = train.instances.iter().map(|i| i.num_positives()).sum();
    println!("mean positives per instance: {:.2}", positives as f64 / train.len() as f64);

    let out = std::env::temp_dir().join("apeer-dataset-example").join("train.jsonl");
    train.save(&out)?;
    println!("saved to {}", out.display());
    Ok(())
}
