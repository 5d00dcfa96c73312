//! Build an in-memory BM25 index, query it, and round-trip it through disk.

use apeer::corpus::{Collection, Passage};
use apeer::retrieval::{Bm25Params, InvertedIndex};
use apeer::synth::{generate, SynthConfig};

fn main() -> apeer::Result<()> {
    let docs = Collection::new(
        vec![
            Passage::new("d1", "The cat sat on the mat."),
            Passage::new("d2", "Dogs chase cats in the garden."),
            Passage::new("d3", "A cat, a cat and another cat!"),
        ],
        "inline",
    )?;
    let index = InvertedIndex::build(&docs, Bm25Params::default())?;
    for hit in index.search("cat", 10)? {
        println!("{:>4} {:.6}", hit.passage_id, hit.score);
    }

    let corpus = generate(&SynthConfig::new(5000, 200, 1))?;
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default())?;
    println!(
        "\nsynthetic: {} docs, {} terms, avgdl {:.2}",
        index.doc_count(),
        index.term_count(),
        index.avg_doc_length()
    );
    let query = &corpus.queries[0];
    println!("query {} {:?}", query.id, query.text);
    for (rank, hit) in index.search(&query.text, 5)?.iter().enumerate() {
        let grade = corpus.qrels.grade(&query.id, &hit.passage_id);
        println!("{:>2}. {} score {:.3} grade {grade}", rank + 1, hit.passage_id, hit.score);
    }

    let dir = tempfile_dir();
    let path = dir.join("index.jsonl");
    index.save(&path)?;
    let back = InvertedIndex::load(&path)?;
    assert_eq!(back.search(&query.text, 100)?, index.search(&query.text, 100)?);
    println!("index round-trip ok ({})", path.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("apeer-bm25-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    dir
}
