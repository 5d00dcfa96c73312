//! nDCG@k with trec_eval conventions and TREC run files.
//!
//! Gain is `2^grade - 1`, discount `log2(i + 1)` for 1-based rank `i`. The ideal
//! DCG is computed over every judged passage of the query, retrieved or not.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn dcg_at_k<I: IntoIterator<Item = u32>>(grades_in_rank_order: I, k: usize) -> f64 {
    grades_in_rank_order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) / discount(i + 1))
        .sum()
}

pub fn ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    grades: &BTreeMap<String, u32>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::validation("nDCG cutoff must be positive"));
    }
    let mut seen = HashSet::with_capacity(ranking.len());
    for id in ranking {
        if !seen.insert(id.as_ref()) {
            return Err(Error::validation(format!(
                "duplicate id {} in ranking",
                id.as_ref()
            )));
        }
    }
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    let dcg = dcg_at_k(
        ranking
            .iter()
            .map(|id| grades.get(id.as_ref()).copied().unwrap_or(0)),
        k,
    );
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub per_query: BTreeMap<String, BTreeMap<usize, f64>>,
    pub means: BTreeMap<usize, f64>,
}

impl RankingEval {
    pub fn mean(&self, cutoff: usize) -> Option<f64> {
        self.means.get(&cutoff).copied()
    }

    pub fn num_queries(&self) -> usize {
        self.per_query.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Keep queries with no positive judgment in the mean (they score 0).
    pub include_zero_positive: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            include_zero_positive: true,
        }
    }
}

pub fn evaluate_run(
    run: &BTreeMap<String, Vec<String>>,
    qrels: &Qrels,
    cutoffs: &[usize],
    options: EvalOptions,
) -> Result<RankingEval> {
    if run.is_empty() {
        return Err(Error::validation("cannot evaluate an empty run"));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::validation("cutoffs must be non-empty and positive"));
    }
    let mut per_query = BTreeMap::new();
    for (qid, ranking) in run {
        let Some(grades) = qrels.for_query(qid) else {
            log::warn!("query {qid} has no judgments; skipped");
            continue;
        };
        if !grades.values().any(|&g| g > 0) {
            if options.include_zero_positive {
                log::warn!("query {qid} has no positive judgment; scores 0");
            } else {
                log::warn!("query {qid} has no positive judgment; excluded");
                continue;
            }
        }
        let mut row = BTreeMap::new();
        for &k in cutoffs {
            row.insert(k, ndcg_at_k(ranking, grades, k)?);
        }
        per_query.insert(qid.clone(), row);
    }
    if per_query.is_empty() {
        return Err(Error::validation("no run query has judgments"));
    }
    let n = per_query.len() as f64;
    let means = cutoffs
        .iter()
        .map(|&k| {
            let total: f64 = per_query.values().map(|row| row[&k]).sum();
            (k, total / n)
        })
        .collect();
    Ok(RankingEval { per_query, means })
}

/// One query's ranked list in a TREC run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub passage_id: String,
    pub score: f64,
}

/// A TREC run: `qid Q0 docid rank score tag`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrecRun {
    pub tag: String,
    pub rankings: BTreeMap<String, Vec<RunEntry>>,
}

impl TrecRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    /// Adds a ranking scored `n, n-1, …, 1` by position.
    pub fn insert_ranking(&mut self, query_id: &str, ids: &[String]) {
        let n = ids.len();
        self.rankings.insert(
            query_id.to_string(),
            ids.iter()
                .enumerate()
                .map(|(i, id)| RunEntry {
                    passage_id: id.clone(),
                    score: (n - i) as f64,
                })
                .collect(),
        );
    }

    pub fn id_lists(&self) -> BTreeMap<String, Vec<String>> {
        self.rankings
            .iter()
            .map(|(q, entries)| {
                (
                    q.clone(),
                    entries.iter().map(|e| e.passage_id.clone()).collect(),
                )
            })
            .collect()
    }

    pub fn to_trec_string(&self) -> String {
        let mut s = String::new();
        for (qid, entries) in &self.rankings {
            for (i, e) in entries.iter().enumerate() {
                s.push_str(&format!(
                    "{qid} Q0 {} {} {} {}\n",
                    e.passage_id,
                    i + 1,
                    e.score,
                    self.tag
                ));
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_trec_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a run file; entries are ordered by the rank column.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tag = String::new();
        let mut rows: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(Error::parse(path, i + 1, "expected `qid Q0 docid rank score tag`"));
            }
            let rank: usize = f[3]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad rank {:?}", f[3])))?;
            let score: f64 = f[4]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad score {:?}", f[4])))?;
            tag = f[5].to_string();
            rows.entry(f[0].to_string()).or_default().push((
                rank,
                RunEntry {
                    passage_id: f[2].to_string(),
                    score,
                },
            ));
        }
        let rankings = rows
            .into_iter()
            .map(|(q, mut v)| {
                v.sort_by_key(|(r, _)| *r);
                (q, v.into_iter().map(|(_, e)| e).collect())
            })
            .collect();
        Ok(Self { tag, rankings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn worked_example() {
        let g = grades(&[("A", 3), ("B", 1), ("C", 0)]);
        let v = ndcg_at_k(&["B", "A", "C"], &g, 3).unwrap();
        assert!((v - 0.709810).abs() < 1e-6, "{v}");
        let dcg = dcg_at_k([1, 3, 0], 3);
        assert!((dcg - 5.416508).abs() < 1e-6);
        assert!((dcg_at_k([3, 1, 0], 3) - 7.630930).abs() < 1e-6);
    }

    #[test]
    fn ideal_order_is_one() {
        let g = grades(&[("a", 2), ("b", 2), ("c", 1), ("d", 0)]);
        assert_eq!(ndcg_at_k(&["b", "a", "c", "d"], &g, 10).unwrap(), 1.0);
    }

    #[test]
    fn all_zero_grades_is_zero() {
        let g = grades(&[("a", 0), ("b", 0)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &g, 5).unwrap(), 0.0);
    }

    #[test]
    fn duplicates_rejected() {
        let g = grades(&[("a", 1)]);
        assert!(matches!(ndcg_at_k(&["a", "a"], &g, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn unretrieved_positive_counts_in_ideal() {
        let g = grades(&[("a", 1), ("b", 1)]);
        let v = ndcg_at_k(&["a"], &g, 10).unwrap();
        assert!(v < 1.0 && v > 0.0);
    }

    #[test]
    fn evaluate_means() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "x", 1);
        qrels.insert("q2", "y", 1);
        let mut run = BTreeMap::new();
        run.insert("q1".to_string(), vec!["a".to_string()]);
        run.insert("q2".to_string(), vec!["z".to_string(), "x".to_string()]);
        let ev = evaluate_run(&run, &qrels, &[1, 5, 10], EvalOptions::default()).unwrap();
        assert_eq!(ev.per_query["q1"][&10], 1.0);
        assert_eq!(ev.mean(1).unwrap(), 0.5);
        let q2 = ev.per_query["q2"][&10];
        assert!((ev.mean(10).unwrap() - (1.0 + q2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_single_ideal_query() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "a", 2);
        qrels.insert("q", "b", 1);
        let run = BTreeMap::from([("q".to_string(), vec!["a".to_string(), "b".to_string()])]);
        let ev = evaluate_run(&run, &qrels, &[1, 5, 10], EvalOptions::default()).unwrap();
        assert!(ev.means.values().all(|&m| m == 1.0));
    }

    #[test]
    fn evaluate_mean_of_two() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "x", 1);
        // single positive at rank 3: 1 / log2(4) = 0.5
        let run = BTreeMap::from([
            ("q1".to_string(), vec!["a".to_string()]),
            ("q2".to_string(), vec!["z".into(), "w".into(), "x".into()]),
        ]);
        let ev = evaluate_run(&run, &qrels, &[10], EvalOptions::default()).unwrap();
        assert_eq!(ev.per_query["q2"][&10], 0.5);
        assert_eq!(ev.mean(10), Some(0.75));
    }

    #[test]
    fn empty_run_rejected() {
        assert!(evaluate_run(&BTreeMap::new(), &Qrels::new(), &[10], EvalOptions::default()).is_err());
    }

    #[test]
    fn zero_positive_query_flag() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "b", 0);
        let run = BTreeMap::from([
            ("q1".to_string(), vec!["a".to_string()]),
            ("q2".to_string(), vec!["b".to_string()]),
        ]);
        let with = evaluate_run(&run, &qrels, &[10], EvalOptions::default()).unwrap();
        assert_eq!(with.mean(10), Some(0.5));
        let without = evaluate_run(
            &run,
            &qrels,
            &[10],
            EvalOptions {
                include_zero_positive: false,
            },
        )
        .unwrap();
        assert_eq!(without.mean(10), Some(1.0));
    }

    #[test]
    fn run_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = TrecRun::new("manual");
        run.insert_ranking("q1", &["b".into(), "a".into()]);
        let p = dir.path().join("run.trec");
        run.save(&p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "q1 Q0 b 1 2 manual\nq1 Q0 a 2 1 manual\n"
        );
        assert_eq!(TrecRun::load(&p).unwrap(), run);
    }
}
