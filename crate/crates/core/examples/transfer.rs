//! Optimize on one synthetic dataset and score the result on another whose
//! queries and passages share nothing with the first.

use std::collections::BTreeMap;
use std::path::Path;

use apeer::commands::{cmd_optimize, cmd_transfer};
use apeer::config::{BackendConfig, DatasetPaths, RunConfig};
use apeer::synth::{generate, write, SynthConfig};

fn paths(dir: &Path) -> DatasetPaths {
    DatasetPaths {
        queries: dir.join("queries.tsv"),
        collection: dir.join("collection.tsv"),
        qrels: dir.join("qrels.txt"),
    }
}

fn main() -> apeer::Result<()> {
    let root = std::env::temp_dir().join("apeer-transfer-example");
    let _ = std::fs::remove_dir_all(&root);
    write(&generate(&SynthConfig::new(5000, 200, 1))?, root.join("source"))?;
    write(&generate(&SynthConfig::new(3000, 120, 9).with_prefix("T"))?, root.join("target"))?;

    let mut config = RunConfig {
        seed: 42,
        output_dir: root.join("out"),
        dataset: "source".into(),
        datasets: BTreeMap::from([
            ("source".to_string(), paths(&root.join("source"))),
            ("target".to_string(), paths(&root.join("target"))),
        ]),
        backend: BackendConfig::default(),
        rerank: Default::default(),
        build: Default::default(),
        optimizer: Default::default(),
        evaluate: Default::default(),
        meta_prompts: None,
        manual_prompt: None,
    };
    config.optimizer.epochs = 2;

    let optimized = cmd_optimize(&config)?;
    let outcome = cmd_transfer(&config, &optimized.best_path, "target")?;
    print!("{}", outcome.report.to_text());
    Ok(())
}
