mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use apeer::dataset::{build_datasets, DatasetConfig, TrainingDataset};
use apeer::llm::{ChatBackend, LlmClient, LlmRequest, LlmResponse, ResponseCache};
use apeer::optimizer::{Optimizer, OptimizerConfig, RunDir, RunState};
use apeer::oracle::{OracleBackend, OracleConfig, OracleWorld};
use apeer::prompt::{manual_prompt, MetaPrompts};
use apeer::reranker::{RerankSettings, Reranker};
use apeer::retrieval::{Bm25Params, InvertedIndex};
use apeer::synth::{generate, SynthConfig};
use apeer::{Error, Result};

use common::{files_under, read};

/// Serves `budget` completions, then fails every call with a terminal error.
struct Flaky {
    inner: OracleBackend,
    budget: usize,
    used: AtomicUsize,
}

impl ChatBackend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(Error::Api {
                status: 400,
                body: "quota exhausted".into(),
            });
        }
        self.inner.chat(request)
    }
}

struct Setup {
    world: OracleWorld,
    train: TrainingDataset,
    val: TrainingDataset,
}

fn setup() -> Setup {
    let corpus = generate(&SynthConfig::new(1500, 60, 3)).unwrap();
    let index = InvertedIndex::build(&corpus.collection, Bm25Params::default()).unwrap();
    let (train, val) =
        build_datasets(&corpus.queries, &corpus.qrels, &index, &corpus.collection, &DatasetConfig::new(40, 9)).unwrap();
    let mut world = OracleWorld::new(OracleConfig::default()).unwrap();
    world.register_qrels(&corpus.queries, &corpus.collection, &corpus.qrels);
    Setup { world, train, val }
}

fn config() -> OptimizerConfig {
    OptimizerConfig {
        seed: 5,
        ..OptimizerConfig::default()
    }
}

/// Runs (or resumes) in `root`; also reports how many backend calls were made.
fn run_counted(s: &Setup, root: &Path, budget: usize) -> (Result<RunState>, usize) {
    let dir = RunDir::new(root);
    let backend = Arc::new(Flaky {
        inner: OracleBackend::new(s.world.clone()),
        budget,
        used: AtomicUsize::new(0),
    });
    let client = LlmClient::new(backend.clone())
        .with_max_in_flight(1)
        .with_cache(Arc::new(ResponseCache::open(dir.cache_file()).unwrap()));
    let reranker = Reranker::new(&client, RerankSettings::new("oracle"));
    let result = Optimizer::new(&reranker, MetaPrompts::default(), config())
        .and_then(|o| o.with_run_dir(dir).run(&s.train, &s.val, &manual_prompt()))
        .map(|o| o.state);
    (result, backend.used.load(Ordering::SeqCst))
}

fn run(s: &Setup, root: &Path, budget: Option<usize>) -> Result<RunState> {
    run_counted(s, root, budget.unwrap_or(usize::MAX)).0
}

fn assert_same_run(a: &Path, b: &Path) {
    assert_eq!(read(a.join("events.log")), read(b.join("events.log")));
    let names = |root: &Path| -> Vec<_> {
        files_under(&root.join("prompts"))
            .iter()
            .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    assert_eq!(names(a), names(b));
    for rel in names(a) {
        assert_eq!(read(a.join(&rel)), read(b.join(&rel)), "{}", rel.display());
    }
}

#[test]
fn resume_after_failure_matches_uninterrupted_run() {
    let s = setup();
    let tmp = tempfile::tempdir().unwrap();
    let clean_root = tmp.path().join("clean");
    let (clean, calls) = run_counted(&s, &clean_root, usize::MAX);
    let clean = clean.unwrap();

    for budget in [calls / 10, calls / 2, calls - 3, calls - 1] {
        let root = tmp.path().join(format!("broken-{budget}"));
        let err = run(&s, &root, Some(budget)).unwrap_err();
        assert!(matches!(err, Error::Api { status: 400, .. }), "{err}");
        let resumed = run(&s, &root, None).unwrap();
        assert_eq!(resumed, clean, "budget {budget}");
        assert_same_run(&root, &clean_root);
    }
}

#[test]
fn checkpoint_written_for_every_epoch() {
    let s = setup();
    let tmp = tempfile::tempdir().unwrap();
    let state = run(&s, tmp.path(), None).unwrap();
    let dir = RunDir::new(tmp.path());
    for e in 0..=3 {
        assert!(dir.checkpoint(e).exists(), "missing checkpoint {e}");
    }
    assert_eq!(RunState::load(dir.checkpoint(3)).unwrap(), state);
    assert!(dir.best_prompt().exists());
}

#[test]
fn resume_rejects_changed_configuration() {
    let s = setup();
    let tmp = tempfile::tempdir().unwrap();
    run(&s, tmp.path(), None).unwrap();
    let client = LlmClient::new(Arc::new(OracleBackend::new(s.world.clone())));
    let reranker = Reranker::new(&client, RerankSettings::new("oracle"));
    let changed = OptimizerConfig {
        seed: 6,
        ..config()
    };
    let opt = Optimizer::new(&reranker, MetaPrompts::default(), changed)
        .unwrap()
        .with_run_dir(RunDir::new(tmp.path()));
    assert!(matches!(opt.run(&s.train, &s.val, &manual_prompt()), Err(Error::Config(_))));
}
