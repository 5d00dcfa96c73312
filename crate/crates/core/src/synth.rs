//! Deterministic synthetic retrieval corpora.
//!
//! Every query owns a handful of topic words that no other query uses.
//! Higher grades repeat more of those words. Near-miss passages stack two
//! query words and often outscore weak positives under BM25; the rest is
//! background text.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_collection, save_qrels, save_queries, Collection, CollectionFormat, Corpus, Passage, Qrels, Query};
use crate::error::{Error, Result};
use crate::util::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub passages: usize,
    pub queries: usize,
    pub seed: u64,
    /// Prefix for every passage and query id.
    #[serde(default)]
    pub id_prefix: String,
    #[serde(default = "default_max_positives")]
    pub max_positives: usize,
    #[serde(default = "default_near_misses")]
    pub near_misses: usize,
    #[serde(default = "default_background_vocab")]
    pub background_vocab: usize,
}

fn default_max_positives() -> usize {
    10
}

fn default_near_misses() -> usize {
    4
}

fn default_background_vocab() -> usize {
    3000
}

impl SynthConfig {
    pub fn new(passages: usize, queries: usize, seed: u64) -> Self {
        Self {
            passages,
            queries,
            seed,
            id_prefix: String::new(),
            max_positives: default_max_positives(),
            near_misses: default_near_misses(),
            background_vocab: default_background_vocab(),
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.id_prefix = prefix.into();
        self
    }
}

const TOPIC_WORDS: usize = 4;
const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

fn vocabulary(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=4);
        let word: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

fn sentence(rng: &mut ChaCha8Rng, background: &[String], must: &[&str], len: usize) -> String {
    let mut words: Vec<&str> = must.to_vec();
    while words.len() < len {
        words.push(background.choose(rng).unwrap());
    }
    words.shuffle(rng);
    words.join(" ")
}

pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    let per_query = config.max_positives + config.near_misses;
    if config.queries == 0 || config.max_positives == 0 {
        return Err(Error::validation("synthetic corpus needs at least one query and one positive"));
    }
    if config.passages < config.queries * per_query {
        return Err(Error::validation(format!(
            "{} passages cannot hold {} queries with up to {per_query} dedicated passages each",
            config.passages, config.queries
        )));
    }
    let mut rng = seeded_rng(derive_seed(&[b"synth", &config.seed.to_le_bytes()]));
    let vocab = vocabulary(&mut rng, config.background_vocab + config.queries * TOPIC_WORDS);
    let (background, topics) = vocab.split_at(config.background_vocab);
    let pid = |i: usize| format!("{}P{i:05}", config.id_prefix);

    let mut queries = Vec::with_capacity(config.queries);
    let mut qrels = Qrels::new();
    let mut passages: Vec<Passage> = Vec::with_capacity(config.passages);
    for qi in 0..config.queries {
        let topic: Vec<&str> = topics[qi * TOPIC_WORDS..(qi + 1) * TOPIC_WORDS].iter().map(String::as_str).collect();
        let qid = format!("{}Q{qi:04}", config.id_prefix);
        queries.push(Query::new(&qid, topic[..3].join(" ")));
        let positives = rng.gen_range(1..=config.max_positives);
        for _ in 0..positives {
            let grade: u32 = rng.gen_range(1..=3);
            let mut must: Vec<&str> = match grade {
                1 => vec![topic[rng.gen_range(0..3)], topic[3], topic[3]],
                2 => topic.to_vec(),
                _ => [&topic[..3], &topic[..3], &topic[3..]].concat(),
            };
            must.push(topic[3]);
            let len = rng.gen_range(30..=60);
            let id = pid(passages.len());
            passages.push(Passage::new(&id, sentence(&mut rng, background, &must, len)));
            qrels.insert(&qid, &id, grade);
        }
        for j in 0..config.near_misses {
            let (a, b) = (topic[j % 3], topic[(j + 1) % 3]);
            let must = [a, a, b, b];
            let len = rng.gen_range(30..=60);
            let id = pid(passages.len());
            passages.push(Passage::new(&id, sentence(&mut rng, background, &must, len)));
            if j % 2 == 0 {
                qrels.insert(&qid, &id, 0);
            }
        }
    }
    while passages.len() < config.passages {
        let len = rng.gen_range(30..=60);
        let id = pid(passages.len());
        passages.push(Passage::new(&id, sentence(&mut rng, background, &[], len)));
    }
    Ok(Corpus {
        queries,
        collection: Collection::new(passages, format!("synthetic:{}", config.seed))?,
        qrels,
    })
}

/// Writes `queries.tsv`, `collection.tsv` and `qrels.txt` into `dir`.
pub fn write(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_queries(dir.join("queries.tsv"), &corpus.queries)?;
    save_collection(dir.join("collection.tsv"), &corpus.collection, CollectionFormat::Tsv)?;
    save_qrels(dir.join("qrels.txt"), &corpus.qrels)
}
