mod common;

use std::path::Path;
use std::process::{Command, Output};

use apeer::synth::SynthConfig;

use common::{read, write_synth};

const CONFIG: &str = r#"
seed = 42
output_dir = "out"
dataset = "source"

[datasets.source]
queries = "source/queries.tsv"
collection = "source/collection.tsv"
qrels = "source/qrels.txt"

[datasets.target]
queries = "target/queries.tsv"
collection = "target/collection.tsv"
qrels = "target/qrels.txt"

[backend]
kind = "oracle_sim"

[build]
n = 40

[evaluate]
max_queries = 30
"#;

fn apeer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apeer"))
        .current_dir(dir)
        .env_remove("APEER_API_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = apeer(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(dir: &Path, args: &[&str]) -> String {
    let out = apeer(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_synth(&dir.path().join("source"), &SynthConfig::new(1500, 60, 1));
    write_synth(&dir.path().join("target"), &SynthConfig::new(1200, 50, 2).with_prefix("T"));
    std::fs::write(dir.path().join("apeer.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_workflow() {
    let ws = workspace();
    let d = ws.path();

    let first = ok(d, &["index"]);
    assert!(first.starts_with("indexed source: 1500 docs"), "{first}");
    assert_eq!(ok(d, &["index"]), first, "index digest must be stable");
    assert!(d.join("out/index/source.jsonl").exists());

    let built = ok(d, &["build-dataset"]);
    assert!(built.contains("40 training instances"), "{built}");
    let train = read(d.join("out/datasets/source/train.jsonl"));

    let optimized = ok(d, &["optimize"]);
    assert!(optimized.contains("best prompt"), "{optimized}");
    for f in ["best_prompt.txt", "events.log", "config.toml", "state/epoch-3.json", "prompts/init-positive.txt"] {
        assert!(d.join("out").join(f).exists(), "missing {f}");
    }
    assert_eq!(ok(d, &["optimize"]), optimized, "a finished run resumes to the same answer");

    let eval = ok(d, &["evaluate", "--prompt", "out/best_prompt.txt"]);
    for label in ["BM25", "manual", "cot", "paraphrase", "apeer"] {
        assert!(eval.contains(label), "{label} missing from\n{eval}");
    }
    let report = read(d.join("out/reports/evaluate-source/report.txt"));
    assert!(d.join("out/reports/evaluate-source/runs/apeer.trec").exists());

    let replayed = ok(d, &["--backend", "replay_cache_only", "evaluate", "--prompt", "out/best_prompt.txt"]);
    assert_eq!(replayed, eval);
    assert_eq!(read(d.join("out/reports/evaluate-source/report.txt")), report);

    let transfer = ok(d, &["transfer", "--prompt", "out/best_prompt.txt", "--target", "target"]);
    assert!(transfer.contains("dataset: target"), "{transfer}");
    assert!(d.join("out/reports/transfer-target/report.csv").exists());

    let err = failure(d, &["--backend", "replay", "evaluate", "--dataset", "target"]);
    assert!(err.contains("cache miss"), "{err}");

    ok(d, &["--seed", "7", "build-dataset"]);
    assert_ne!(read(d.join("out/datasets/source/train.jsonl")), train, "--seed must change the sample");
}

#[test]
fn missing_collection_is_a_config_error() {
    let ws = workspace();
    std::fs::remove_file(ws.path().join("source/collection.tsv")).unwrap();
    let err = failure(ws.path(), &["index"]);
    assert!(err.contains("dataset source collection path"), "{err}");
}

#[test]
fn http_backend_needs_key_and_endpoint() {
    let ws = workspace();
    let d = ws.path();
    let err = failure(d, &["--backend", "http", "index"]);
    assert!(err.contains("endpoint"), "{err}");
    let with_endpoint = CONFIG.replace("kind = \"oracle_sim\"", "kind = \"http\"\nendpoint = \"http://127.0.0.1:9\"");
    std::fs::write(d.join("apeer.toml"), with_endpoint).unwrap();
    let err = failure(d, &["index"]);
    assert!(err.contains("APEER_API_KEY"), "{err}");
}

#[test]
fn bad_flags_and_files() {
    let ws = workspace();
    let d = ws.path();
    assert!(failure(d, &["--backend", "telepathy", "index"]).contains("telepathy"));
    assert!(failure(d, &["--config", "nope.toml", "index"]).contains("nope.toml"));
    std::fs::write(d.join("typo.toml"), CONFIG.replace("[build]", "[biuld]")).unwrap();
    assert!(failure(d, &["--config", "typo.toml", "index"]).contains("biuld"));
    let help = ok(d, &["--help"]);
    for sub in ["index", "build-dataset", "optimize", "evaluate", "transfer"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}
