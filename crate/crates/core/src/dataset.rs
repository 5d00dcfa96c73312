//! Training / validation set construction.
//!
//! Each instance pairs a sampled query with up to 10 judged positives and
//! enough zero-grade BM25 negatives to reach a fixed candidate count, in a
//! seeded random order. Negatives come from BM25 top-100, then top-1000,
//! then uniformly random zero-grade passages if the first two run short.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, Passage, Qrels, Query};
use crate::error::{Error, Result};
use crate::retrieval::InvertedIndex;
use crate::util::{derive_seed, seeded_rng};

pub const DEFAULT_CANDIDATES: usize = 20;
pub const DEFAULT_MAX_POSITIVES: usize = 10;
const PRIMARY_DEPTH: usize = 100;
const FALLBACK_DEPTH: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query: Query,
    pub candidates: Vec<Passage>,
    pub relevance: BTreeMap<String, u32>,
}

impl TrainingInstance {
    pub fn grade(&self, passage_id: &str) -> u32 {
        self.relevance.get(passage_id).copied().unwrap_or(0)
    }

    pub fn num_positives(&self) -> usize {
        self.candidates
            .iter()
            .filter(|p| self.grade(&p.id) > 0)
            .count()
    }

    /// 1-based candidate indices sorted by grade descending, index ascending.
    pub fn ideal_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (1..=self.candidates.len()).collect();
        idx.sort_by(|&a, &b| {
            self.grade(&self.candidates[b - 1].id)
                .cmp(&self.grade(&self.candidates[a - 1].id))
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn validate(&self, size: usize) -> Result<()> {
        if self.candidates.len() != size {
            return Err(Error::validation(format!(
                "instance {} has {} candidates, expected {size}",
                self.query.id,
                self.candidates.len()
            )));
        }
        let mut seen = HashSet::new();
        for p in &self.candidates {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::validation(format!(
                    "instance {} repeats candidate {}",
                    self.query.id, p.id
                )));
            }
            if !self.relevance.contains_key(&p.id) {
                return Err(Error::validation(format!(
                    "instance {} lacks a grade for {}",
                    self.query.id, p.id
                )));
            }
        }
        if self.num_positives() == 0 {
            return Err(Error::validation(format!(
                "instance {} has no positive candidate",
                self.query.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub instances: Vec<TrainingInstance>,
    pub seed: u64,
    pub provenance: String,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// One instance per line. Seed and provenance go to a `.meta.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut buf = Vec::new();
        for inst in &self.instances {
            serde_json::to_writer(&mut buf, inst)?;
            buf.push(b'\n');
        }
        fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
        let meta = DatasetMeta {
            seed: self.seed,
            provenance: self.provenance.clone(),
            instances: self.instances.len(),
        };
        let meta_path = meta_path(path);
        let mut f = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut instances = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let inst: TrainingInstance =
                serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if !seen.insert(inst.query.id.clone()) {
                return Err(Error::validation(format!(
                    "{}:{}: duplicate instance query {}",
                    path.display(),
                    i + 1,
                    inst.query.id
                )));
            }
            instances.push(inst);
        }
        let meta_path = meta_path(path);
        let (seed, provenance) = match fs::read_to_string(&meta_path) {
            Ok(s) => {
                let meta: DatasetMeta = serde_json::from_str(&s)?;
                (meta.seed, meta.provenance)
            }
            Err(_) => (0, path.display().to_string()),
        };
        Ok(Self {
            instances,
            seed,
            provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    seed: u64,
    provenance: String,
    instances: usize,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Uniform sample without replacement among queries with a positive judgment.
pub fn sample_queries(queries: &[Query], qrels: &Qrels, n: usize, seed: u64) -> Result<Vec<Query>> {
    if n == 0 {
        return Err(Error::validation("sample size must be positive"));
    }
    let mut eligible: Vec<&Query> = queries
        .iter()
        .filter(|q| qrels.num_positives(&q.id) > 0)
        .collect();
    if eligible.len() < n {
        return Err(Error::validation(format!(
            "need {n} queries with a positive judgment, only {} available ({} short)",
            eligible.len(),
            n - eligible.len()
        )));
    }
    let mut rng = seeded_rng(derive_seed(&[b"sample", &seed.to_le_bytes()]));
    let (picked, _) = eligible.partial_shuffle(&mut rng, n);
    Ok(picked.iter().map(|q| (*q).clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub size: usize,
    pub max_positives: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            size: DEFAULT_CANDIDATES,
            max_positives: DEFAULT_MAX_POSITIVES,
        }
    }
}

pub fn instance_seed(seed: u64, query_id: &str) -> u64 {
    derive_seed(&[b"instance", &seed.to_le_bytes(), query_id.as_bytes()])
}

pub fn build_instance(
    query: &Query,
    qrels: &Qrels,
    index: &InvertedIndex,
    collection: &Collection,
    spec: InstanceSpec,
    seed: u64,
) -> Result<TrainingInstance> {
    if spec.size == 0 || spec.max_positives == 0 {
        return Err(Error::validation("instance size and positive cap must be positive"));
    }
    let judged = qrels.for_query(&query.id);
    let mut positives: Vec<(&str, u32)> = judged
        .into_iter()
        .flatten()
        .filter(|(_, &g)| g > 0)
        .map(|(id, &g)| (id.as_str(), g))
        .collect();
    if positives.is_empty() {
        return Err(Error::validation(format!("query {} has no positive judgment", query.id)));
    }
    positives.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut chosen: Vec<Passage> = Vec::with_capacity(spec.size);
    let mut taken: HashSet<String> = HashSet::new();
    let cap = spec.max_positives.min(spec.size);
    for (id, _) in positives {
        if chosen.len() == cap {
            break;
        }
        match collection.get(id) {
            Some(p) => {
                taken.insert(p.id.clone());
                chosen.push(p.clone());
            }
            None => log::warn!("positive {id} for query {} not in collection", query.id),
        }
    }
    if chosen.is_empty() {
        return Err(Error::validation(format!(
            "no positive passage of query {} exists in the collection",
            query.id
        )));
    }

    let mut fill_from_search = |depth: usize, chosen: &mut Vec<Passage>| -> Result<()> {
        if chosen.len() >= spec.size {
            return Ok(());
        }
        for hit in index.search(&query.text, depth)? {
            if chosen.len() >= spec.size {
                break;
            }
            if qrels.grade(&query.id, &hit.passage_id) != 0 || taken.contains(&hit.passage_id) {
                continue;
            }
            if let Some(p) = collection.get(&hit.passage_id) {
                taken.insert(p.id.clone());
                chosen.push(p.clone());
            }
        }
        Ok(())
    };
    fill_from_search(PRIMARY_DEPTH, &mut chosen)?;
    fill_from_search(FALLBACK_DEPTH, &mut chosen)?;

    let mut rng = seeded_rng(instance_seed(seed, &query.id));
    if chosen.len() < spec.size {
        let mut pool: Vec<&Passage> = collection
            .iter()
            .filter(|p| !taken.contains(&p.id) && qrels.grade(&query.id, &p.id) == 0)
            .collect();
        let need = spec.size - chosen.len();
        if pool.len() < need {
            return Err(Error::validation(format!(
                "query {}: only {} candidates reachable, {} required",
                query.id,
                chosen.len() + pool.len(),
                spec.size
            )));
        }
        log::debug!("query {}: {need} negatives drawn at random", query.id);
        let (extra, _) = pool.partial_shuffle(&mut rng, need);
        chosen.extend(extra.iter().map(|p| (*p).clone()));
    }

    chosen.shuffle(&mut rng);
    let relevance = chosen
        .iter()
        .map(|p| (p.id.clone(), qrels.grade(&query.id, &p.id)))
        .collect();
    Ok(TrainingInstance {
        query: query.clone(),
        candidates: chosen,
        relevance,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ValidationMode {
    /// Validation set is an exact copy of the training set.
    #[default]
    Copy,
    /// Validation set is `m` further queries, disjoint from training.
    Disjoint { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub validation: ValidationMode,
    #[serde(default)]
    pub spec: InstanceSpec,
}

impl DatasetConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            validation: ValidationMode::Copy,
            spec: InstanceSpec::default(),
        }
    }
}

fn build_all(
    queries: &[Query],
    qrels: &Qrels,
    index: &InvertedIndex,
    collection: &Collection,
    config: &DatasetConfig,
) -> Result<Vec<TrainingInstance>> {
    queries
        .par_iter()
        .map(|q| build_instance(q, qrels, index, collection, config.spec, config.seed))
        .collect()
}

/// Builds the training and validation sets.
pub fn build_datasets(
    queries: &[Query],
    qrels: &Qrels,
    index: &InvertedIndex,
    collection: &Collection,
    config: &DatasetConfig,
) -> Result<(TrainingDataset, TrainingDataset)> {
    let provenance = collection.source_path().to_string();
    let total = match config.validation {
        ValidationMode::Copy => config.n,
        ValidationMode::Disjoint { m } => config.n + m,
    };
    let sampled = sample_queries(queries, qrels, total, config.seed)?;
    let (train_q, val_q) = sampled.split_at(config.n);
    let train = TrainingDataset {
        instances: build_all(train_q, qrels, index, collection, config)?,
        seed: config.seed,
        provenance: provenance.clone(),
    };
    let val = match config.validation {
        ValidationMode::Copy => train.clone(),
        ValidationMode::Disjoint { .. } => TrainingDataset {
            instances: build_all(val_q, qrels, index, collection, config)?,
            seed: config.seed,
            provenance,
        },
    };
    Ok((train, val))
}
