//! In-memory Okapi BM25.
//!
//! Documents are numbered by ascending passage id, so postings sorted by
//! ordinal are also sorted by passage id and the score tie-break
//! (passage id ascending) is an ordinal comparison.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Collection;
use crate::error::{Error, Result};

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub passage_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    /// Passage ids in ascending order; position is the document ordinal.
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(collection: &Collection, params: Bm25Params) -> Result<Self> {
        if collection.is_empty() {
            return Err(Error::validation("cannot index an empty collection"));
        }
        let mut docs: Vec<(&str, &str)> = collection
            .iter()
            .map(|p| (p.id.as_str(), p.text.as_str()))
            .collect();
        docs.sort_unstable_by(|a, b| a.0.cmp(b.0));

        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (ordinal, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf: count,
                });
            }
            doc_ids.push(id.to_string());
            doc_lengths.push(tokens.len() as u32);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<u32> {
        self.ordinal(passage_id).map(|o| self.doc_lengths[o])
    }

    pub fn passage_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    fn ordinal(&self, passage_id: &str) -> Option<usize> {
        self.doc_ids
            .binary_search_by(|id| id.as_str().cmp(passage_id))
            .ok()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `k` documents with a positive score, score descending then passage id ascending.
    pub fn search(&self, query_text: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        if k == 0 {
            return Err(Error::validation("search depth k must be positive"));
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        for term in tokenize(query_text) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in list {
                let slot = &mut scores[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                let tf = p.tf as f64;
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let norm = k1 * (1.0 - b + b * dl / self.avg_doc_length);
                *slot += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        touched.sort_unstable_by(|&x, &y| {
            scores[y as usize]
                .total_cmp(&scores[x as usize])
                .then(x.cmp(&y))
        });
        Ok(touched
            .into_iter()
            .filter(|&d| scores[d as usize] > 0.0)
            .take(k)
            .map(|d| ScoredDoc {
                passage_id: self.doc_ids[d as usize].clone(),
                score: scores[d as usize],
            })
            .collect())
    }

    /// Writes the index as JSON lines: a header, one line per document, one per term.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut emit = |rec: &IndexRecord<'_>| -> Result<()> {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))
        };
        emit(&IndexRecord::Header {
            version: INDEX_FORMAT_VERSION,
            k1: self.params.k1,
            b: self.params.b,
            doc_count: self.doc_count(),
        })?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            emit(&IndexRecord::Doc {
                id: id.into(),
                len: *len,
            })?;
        }
        for (term, list) in &self.postings {
            emit(&IndexRecord::Term {
                term: term.into(),
                postings: list.iter().map(|p| (p.doc, p.tf)).collect(),
            })?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut params = None;
        let mut expected_docs = 0usize;
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let rec: IndexRecord<'_> =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            match rec {
                IndexRecord::Header {
                    version,
                    k1,
                    b,
                    doc_count,
                } => {
                    if version != INDEX_FORMAT_VERSION {
                        return Err(Error::parse(path, i + 1, format!("unsupported index version {version}")));
                    }
                    params = Some(Bm25Params { k1, b });
                    expected_docs = doc_count;
                }
                IndexRecord::Doc { id, len } => {
                    doc_ids.push(id.into_owned());
                    doc_lengths.push(len);
                }
                IndexRecord::Term { term, postings: list } => {
                    let list: Vec<Posting> =
                        list.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect();
                    if list.iter().any(|p| p.doc as usize >= expected_docs) {
                        return Err(Error::parse(path, i + 1, "posting references unknown document"));
                    }
                    postings.insert(term.into_owned(), list);
                }
            }
        }
        let params = params.ok_or_else(|| Error::parse(path, 1, "missing index header"))?;
        if doc_ids.len() != expected_docs || expected_docs == 0 {
            return Err(Error::parse(path, 1, "document count does not match header"));
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum IndexRecord<'a> {
    Header {
        version: u32,
        k1: f64,
        b: f64,
        doc_count: usize,
    },
    Doc {
        #[serde(borrow)]
        id: std::borrow::Cow<'a, str>,
        len: u32,
    },
    Term {
        #[serde(borrow)]
        term: std::borrow::Cow<'a, str>,
        postings: Vec<(u32, u32)>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use proptest::prelude::*;

    fn collection(docs: &[(&str, &str)]) -> Collection {
        Collection::new(
            docs.iter().map(|(i, t)| Passage::new(*i, *t)).collect(),
            "mem",
        )
        .unwrap()
    }

    fn cats() -> Collection {
        collection(&[("d1", "cat sat"), ("d2", "dog sat"), ("d3", "cat cat")])
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("BM25, the Okapi model!"), ["bm25", "the", "okapi", "model"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Covid-19"), ["covid", "19"]);
    }

    #[test]
    fn build_counts_document_frequencies() {
        let idx = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_freq("cat"), 2);
        assert_eq!(idx.doc_freq("sat"), 2);
        assert_eq!(idx.doc_freq("dog"), 1);
        assert_eq!(idx.avg_doc_length(), 2.0);
        assert_eq!(idx.doc_count(), 3);
    }

    #[test]
    fn single_document_average_is_its_length() {
        let idx = InvertedIndex::build(&collection(&[("a", "one two three")]), Bm25Params::default())
            .unwrap();
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn rebuild_is_identical() {
        let a = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        let b = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_collection_rejected() {
        let empty = Collection::new(vec![], "mem").unwrap();
        assert!(matches!(
            InvertedIndex::build(&empty, Bm25Params::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn cat_query_scores() {
        let idx = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert!((idx.idf("cat") - 0.470004).abs() < 1e-6);
        let hits = idx.search("cat", 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.passage_id.as_str()).collect();
        assert_eq!(ids, ["d3", "d1"]);
        assert!((hits[0].score - 0.615866).abs() < 1e-6);
        assert!((hits[1].score - 0.470004).abs() < 1e-6);
    }

    #[test]
    fn unknown_terms_yield_nothing() {
        let idx = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert!(idx.search("zebra", 5).unwrap().is_empty());
        assert!(idx.search("", 5).unwrap().is_empty());
    }

    #[test]
    fn zero_depth_rejected() {
        let idx = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert!(matches!(idx.search("cat", 0), Err(Error::Validation(_))));
    }

    #[test]
    fn deep_k_returns_all_positive() {
        let idx = InvertedIndex::build(&cats(), Bm25Params::default()).unwrap();
        assert_eq!(idx.search("sat cat", 1000).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_on_passage_id() {
        let idx = InvertedIndex::build(
            &collection(&[("b", "x y"), ("a", "x y"), ("c", "x y")]),
            Bm25Params::default(),
        )
        .unwrap();
        let ids: Vec<_> = idx
            .search("x", 3)
            .unwrap()
            .into_iter()
            .map(|h| h.passage_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn persistence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let idx = InvertedIndex::build(&cats(), Bm25Params { k1: 1.2, b: 0.75 }).unwrap();
        let p = dir.path().join("index.jsonl");
        idx.save(&p).unwrap();
        assert_eq!(InvertedIndex::load(&p).unwrap(), idx);
    }

    proptest! {
        #[test]
        fn more_occurrences_never_lower_score(
            filler in proptest::collection::vec("[a-e]", 4..8),
            swaps in 1usize..4,
        ) {
            let mut base = filler.clone();
            let mut scores = Vec::new();
            for n in 0..=swaps.min(base.len()) {
                if n > 0 { base[n - 1] = "zz".to_string(); }
                let docs = vec![
                    Passage::new("target", base.join(" ")),
                    Passage::new("other", "zz a b c"),
                    Passage::new("third", "q r s t"),
                ];
                let idx = InvertedIndex::build(&Collection::new(docs, "mem").unwrap(), Bm25Params::default()).unwrap();
                let s = idx.search("zz", 10).unwrap().into_iter()
                    .find(|h| h.passage_id == "target").map_or(0.0, |h| h.score);
                scores.push(s);
            }
            // df("zz") is constant once target holds one occurrence; length never changes.
            for w in scores.windows(2).skip(1) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
