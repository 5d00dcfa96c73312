//! Queries, passage collections and graded relevance judgments.
//!
//! Formats:
//! - queries: `id<TAB>text` per line
//! - collections: `id<TAB>text` per line, or JSON lines with `id` and `contents`
//! - qrels: TREC `qid 0 docid grade`, whitespace separated
//!
//! Blank lines are ignored everywhere. Everything is immutable once loaded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectionFormat {
    Tsv,
    Jsonl,
}

impl CollectionFormat {
    /// `.jsonl` / `.json` map to JSON lines, anything else to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CollectionFormat::Jsonl,
            _ => CollectionFormat::Tsv,
        }
    }
}

/// An ordered passage set. Iteration order is load order.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    source_path: String,
}

impl Collection {
    pub fn new(passages: Vec<Passage>, source_path: impl Into<String>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::validation(format!("passage at position {i} has an empty id")));
            }
            if p.text.is_empty() {
                return Err(Error::validation(format!("passage {} has empty text", p.id)));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate passage id {}", p.id)));
            }
        }
        Ok(Self {
            passages,
            by_id,
            source_path: source_path.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }
}

/// Graded judgments, `query id -> passage id -> grade`. Unjudged pairs read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment, returning the previous grade if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(passage_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn num_positives(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |m| m.values().filter(|&&g| g > 0).count())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers, `\r` stripped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn split_tsv_pair<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 2 {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected 2 tab-separated fields, found {}", fields.len()),
        ));
    }
    let (id, text) = (fields[0], fields[1]);
    if id.trim().is_empty() || text.trim().is_empty() {
        return Err(Error::parse(path, line_no, "empty id or text"));
    }
    Ok((id, text))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let (id, body) = split_tsv_pair(path, line_no, line)?;
        if !seen.insert(id.to_string()) {
            return Err(Error::validation(format!(
                "{}:{line_no}: duplicate query id {id}",
                path.display()
            )));
        }
        out.push(Query::new(id, body));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonlPassage {
    id: String,
    contents: String,
}

#[derive(Serialize)]
struct JsonlPassageRef<'a> {
    id: &'a str,
    contents: &'a str,
}

pub fn load_collection(path: impl AsRef<Path>, format: CollectionFormat) -> Result<Collection> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut passages = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in content_lines(&text) {
        let passage = match format {
            CollectionFormat::Tsv => {
                let (id, body) = split_tsv_pair(path, line_no, line)?;
                Passage::new(id, body)
            }
            CollectionFormat::Jsonl => {
                let row: JsonlPassage = serde_json::from_str(line)
                    .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
                if row.id.is_empty() || row.contents.is_empty() {
                    return Err(Error::parse(path, line_no, "empty id or contents"));
                }
                Passage::new(row.id, row.contents)
            }
        };
        if !seen.insert(passage.id.clone()) {
            return Err(Error::validation(format!(
                "{}:{line_no}: duplicate passage id {}",
                path.display(),
                passage.id
            )));
        }
        passages.push(passage);
    }
    Collection::new(passages, path.display().to_string())
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut qrels = Qrels::new();
    for (line_no, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 whitespace-separated fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("non-integer grade {:?}", fields[3])))?;
        if grade < 0 {
            return Err(Error::validation(format!(
                "{}:{line_no}: negative grade {grade}",
                path.display()
            )));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(path, line_no, format!("grade {grade} out of range")))?;
        if let Some(prev) = qrels.insert(fields[0], fields[2], grade) {
            log::warn!(
                "{}:{line_no}: repeated judgment for ({}, {}), {prev} replaced by {grade}",
                path.display(),
                fields[0],
                fields[2]
            );
        }
    }
    Ok(qrels)
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

fn check_tsv_field(kind: &str, id: &str, value: &str) -> Result<()> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(Error::validation(format!(
            "{kind} {id} contains a tab or newline and cannot be written as TSV"
        )));
    }
    Ok(())
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_file(path)?;
    for q in queries {
        check_tsv_field("query", &q.id, &q.id)?;
        check_tsv_field("query", &q.id, &q.text)?;
        writeln!(out, "{}\t{}", q.id, q.text).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn save_collection(
    path: impl AsRef<Path>,
    collection: &Collection,
    format: CollectionFormat,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_file(path)?;
    for p in collection.iter() {
        match format {
            CollectionFormat::Tsv => {
                check_tsv_field("passage", &p.id, &p.id)?;
                check_tsv_field("passage", &p.id, &p.text)?;
                writeln!(out, "{}\t{}", p.id, p.text).map_err(|e| Error::io(path, e))?;
            }
            CollectionFormat::Jsonl => {
                let row = JsonlPassageRef {
                    id: &p.id,
                    contents: &p.text,
                };
                serde_json::to_writer(&mut out, &row)?;
                out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn save_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_file(path)?;
    for (q, d, g) in qrels.iter() {
        writeln!(out, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Convenience bundle for a query set, its collection and judgments.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub queries: Vec<Query>,
    pub collection: Collection,
    pub qrels: Qrels,
}

impl Corpus {
    pub fn load(queries: &Path, collection: &Path, qrels: &Path) -> Result<Self> {
        Ok(Self {
            queries: load_queries(queries)?,
            collection: load_collection(collection, CollectionFormat::from_path(collection))?,
            qrels: load_qrels(qrels)?,
        })
    }
}

pub(crate) fn ensure_exists(kind: &str, path: &Path) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Config(format!("{kind} path {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn query_line_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.tsv", "q1\twhat is bm25\n");
        let qs = load_queries(&p).unwrap();
        assert_eq!(qs, vec![Query::new("q1", "what is bm25")]);
    }

    #[test]
    fn empty_query_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.tsv", "");
        assert!(load_queries(&p).unwrap().is_empty());
    }

    #[test]
    fn query_without_tab_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.tsv", "q1\n");
        match load_queries(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_query_id_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.tsv", "q1\ta\nq1\tb\n");
        assert!(matches!(load_queries(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn jsonl_collection_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            "{\"id\":\"d7\",\"contents\":\"BM25 is a ranking function\"}\n",
        );
        let c = load_collection(&p, CollectionFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("d7").unwrap().text, "BM25 is a ranking function");
    }

    #[test]
    fn duplicate_passage_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            "{\"id\":\"d7\",\"contents\":\"a\"}\n{\"id\":\"d7\",\"contents\":\"b\"}\n",
        );
        assert!(matches!(
            load_collection(&p, CollectionFormat::Jsonl),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn tsv_collection_keeps_load_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.tsv", "d3\tthree\nd1\tone\nd2\ttwo\n");
        let c = load_collection(&p, CollectionFormat::Tsv).unwrap();
        let ids: Vec<_> = c.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["d3", "d1", "d2"]);
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "{\"id\":\"a\",\"contents\":\"x\"}\n\n{oops}\n");
        match load_collection(&p, CollectionFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn qrels_row_and_default_grade() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "qrels.txt", "264014 0 4834547 2\n");
        let q = load_qrels(&p).unwrap();
        assert_eq!(q.grade("264014", "4834547"), 2);
        assert_eq!(q.grade("264014", "nope"), 0);
        assert_eq!(q.grade("nope", "4834547"), 0);
    }

    #[test]
    fn qrels_negative_grade_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "qrels.txt", "q1 0 d1 -1\n");
        assert!(matches!(load_qrels(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn qrels_non_integer_grade_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "qrels.txt", "q1 0 d1 high\n");
        assert!(matches!(load_qrels(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn qrels_repeat_keeps_last() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "qrels.txt", "q1 0 d1 1\nq1 0 d1 3\n");
        assert_eq!(load_qrels(&p).unwrap().grade("q1", "d1"), 3);
    }

    #[test]
    fn tsv_save_rejects_embedded_tabs() {
        let dir = tempfile::tempdir().unwrap();
        let c = Collection::new(vec![Passage::new("d1", "a\tb")], "mem").unwrap();
        assert!(save_collection(dir.path().join("c.tsv"), &c, CollectionFormat::Tsv).is_err());
    }
}
