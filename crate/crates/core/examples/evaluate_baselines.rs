//! End-to-end: index, build datasets, optimize and evaluate against the
//! manual, step-by-step and paraphrased baselines, all through the command
//! layer the `apeer` binary uses.

use std::collections::BTreeMap;

use apeer::commands::{cmd_build_dataset, cmd_evaluate, cmd_index, cmd_optimize};
use apeer::config::{BackendConfig, DatasetPaths, RunConfig};
use apeer::synth::{generate, write, SynthConfig};

fn main() -> apeer::Result<()> {
    let root = std::env::temp_dir().join("apeer-evaluate-example");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");
    write(&generate(&SynthConfig::new(5000, 200, 1))?, &data)?;

    let mut config = RunConfig {
        seed: 42,
        output_dir: root.join("out"),
        dataset: "synth".into(),
        datasets: BTreeMap::from([(
            "synth".to_string(),
            DatasetPaths {
                queries: data.join("queries.tsv"),
                collection: data.join("collection.tsv"),
                qrels: data.join("qrels.txt"),
            },
        )]),
        backend: BackendConfig::default(),
        rerank: Default::default(),
        build: Default::default(),
        optimizer: Default::default(),
        evaluate: Default::default(),
        meta_prompts: None,
        manual_prompt: None,
    };
    config.evaluate.max_queries = Some(60);

    println!("{}", cmd_index(&config)?.line());
    let built = cmd_build_dataset(&config)?;
    println!("train {} / val {}", built.train, built.val);
    let optimized = cmd_optimize(&config)?;
    println!("best {} -> {}", optimized.best.id, optimized.best_path.display());

    let outcome = cmd_evaluate(&config, &[optimized.best_path], None)?;
    print!("\n{}", outcome.report.to_text());
    println!("\n{}", outcome.report_dir.display());
    Ok(())
}
