#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apeer::config::{BackendConfig, DatasetPaths, RunConfig};
use apeer::corpus::Corpus;
use apeer::synth::{generate, write, SynthConfig};

pub fn paths(dir: &Path) -> DatasetPaths {
    DatasetPaths {
        queries: dir.join("queries.tsv"),
        collection: dir.join("collection.tsv"),
        qrels: dir.join("qrels.txt"),
    }
}

pub fn write_synth(dir: &Path, synth: &SynthConfig) -> Corpus {
    let corpus = generate(synth).expect("synthetic corpus");
    write(&corpus, dir).expect("write corpus");
    corpus
}

/// A run config over datasets already written below `root/<name>`.
pub fn run_config(root: &Path, output: &str, datasets: &[&str]) -> RunConfig {
    RunConfig {
        seed: 42,
        output_dir: root.join(output),
        dataset: datasets[0].to_string(),
        datasets: datasets
            .iter()
            .map(|d| (d.to_string(), paths(&root.join(d))))
            .collect::<BTreeMap<_, _>>(),
        backend: BackendConfig::default(),
        rerank: Default::default(),
        build: Default::default(),
        optimizer: Default::default(),
        evaluate: Default::default(),
        meta_prompts: None,
        manual_prompt: None,
    }
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
