//! Run configuration, read from one TOML or JSON file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ensure_exists, Corpus};
use crate::dataset::ValidationMode;
use crate::error::{Error, Result};
use crate::llm::{
    BackendKind, HttpBackend, API_KEY_ENV, LlmClient, ResponseCache, RetryPolicy, ScriptedBackend, DEFAULT_MAX_IN_FLIGHT,
};
use crate::optimizer::OptimizerConfig;
use crate::oracle::{OracleBackend, OracleConfig, OracleWorld};
use crate::reranker::{ErrorPolicy, RerankSettings, WindowPlan, DEFAULT_MAX_PASSAGE_WORDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub queries: PathBuf,
    pub collection: PathBuf,
    pub qrels: PathBuf,
}

impl DatasetPaths {
    pub fn load(&self) -> Result<Corpus> {
        Corpus::load(&self.queries, &self.collection, &self.qrels)
    }

    fn check(&self, name: &str) -> Result<()> {
        ensure_exists(&format!("dataset {name} queries"), &self.queries)?;
        ensure_exists(&format!("dataset {name} collection"), &self.collection)?;
        ensure_exists(&format!("dataset {name} qrels"), &self.qrels)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    /// Response cache; defaults to `<output_dir>/cache/llm.jsonl`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Canned answers for `mock_scripted`, served in order and cycled.
    #[serde(default)]
    pub script: Vec<String>,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_model() -> String {
    "gpt-4".into()
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

fn default_timeout() -> u64 {
    120
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::OracleSim,
            endpoint: None,
            model: default_model(),
            cache: None,
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            script: Vec::new(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    #[serde(default = "default_window")]
    pub window_size: usize,
    #[serde(default = "default_step")]
    pub step: usize,
    #[serde(default = "default_words")]
    pub max_passage_words: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub on_error: ErrorPolicy,
    /// First-stage candidates per query.
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_window() -> usize {
    WindowPlan::default().window_size
}

fn default_step() -> usize {
    WindowPlan::default().step
}

fn default_words() -> usize {
    DEFAULT_MAX_PASSAGE_WORDS
}

fn default_tokens() -> u32 {
    crate::llm::DEFAULT_MAX_OUTPUT_TOKENS
}

fn default_depth() -> usize {
    100
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            window_size: default_window(),
            step: default_step(),
            max_passage_words: default_words(),
            temperature: 0.0,
            max_output_tokens: default_tokens(),
            on_error: ErrorPolicy::Propagate,
            depth: default_depth(),
        }
    }
}

impl RerankConfig {
    pub fn plan(&self) -> WindowPlan {
        WindowPlan {
            window_size: self.window_size,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBuild {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub validation: ValidationMode,
}

fn default_n() -> usize {
    100
}

impl Default for DatasetBuild {
    fn default() -> Self {
        Self {
            n: default_n(),
            validation: ValidationMode::Copy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Count judged queries without any positive (they score 0).
    #[serde(default = "default_true")]
    pub include_zero_positive: bool,
    /// Evaluate at most this many judged queries, in id order.
    #[serde(default)]
    pub max_queries: Option<usize>,
    /// Also score the manual, step-by-step and paraphrased prompts.
    #[serde(default = "default_true")]
    pub baselines: bool,
}

fn default_cutoffs() -> Vec<usize> {
    vec![1, 5, 10]
}

fn default_true() -> bool {
    true
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            cutoffs: default_cutoffs(),
            include_zero_positive: true,
            max_queries: None,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Name of the dataset used for indexing, dataset building and optimization.
    pub dataset: String,
    pub datasets: BTreeMap<String, DatasetPaths>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub rerank: RerankConfig,
    #[serde(default)]
    pub build: DatasetBuild,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    /// Directory with replacement meta-prompt templates.
    #[serde(default)]
    pub meta_prompts: Option<PathBuf>,
    /// Manual prompt file; the bundled instruction is used when absent.
    #[serde(default)]
    pub manual_prompt: Option<PathBuf>,
}

impl RunConfig {
    /// Parses without touching the file system beyond reading `path`.
    /// Relative paths inside the file are resolved against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut config = Self::parse(&text, is_json)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_relative(base);
        Ok(config)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let value: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?
        } else {
            let v: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML config: {e}")))?;
            serde_json::to_value(v)?
        };
        if value.get("seed").is_none() {
            return Err(Error::Config("config must set `seed`".into()));
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for d in self.datasets.values_mut() {
            fix(&mut d.queries);
            fix(&mut d.collection);
            fix(&mut d.qrels);
        }
        for p in [&mut self.backend.cache, &mut self.meta_prompts, &mut self.manual_prompt]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.datasets.contains_key(&self.dataset) {
            return Err(Error::Config(format!("dataset {:?} is not defined under [datasets]", self.dataset)));
        }
        for (name, d) in &self.datasets {
            d.check(name)?;
        }
        if let Some(p) = &self.meta_prompts {
            ensure_exists("meta prompt directory", p)?;
        }
        if let Some(p) = &self.manual_prompt {
            ensure_exists("manual prompt", p)?;
        }
        self.rerank.plan().validate()?;
        if self.rerank.depth == 0 {
            return Err(Error::Config("rerank depth must be at least 1".into()));
        }
        if self.evaluate.cutoffs.is_empty() || self.evaluate.cutoffs.contains(&0) {
            return Err(Error::Config("evaluation cutoffs must be a non-empty list of positive integers".into()));
        }
        self.optimizer.validate()?;
        match self.backend.kind {
            BackendKind::Http if self.backend.endpoint.is_none() => {
                Err(Error::Config("backend kind http requires `endpoint`".into()))
            }
            BackendKind::Http if std::env::var(API_KEY_ENV).map_or(true, |k| k.is_empty()) => {
                Err(Error::MissingEnv(API_KEY_ENV))
            }
            BackendKind::MockScripted if self.backend.script.is_empty() => {
                Err(Error::Config("backend kind mock_scripted requires a non-empty `script`".into()))
            }
            BackendKind::ReplayCacheOnly if !self.cache_path().exists() => Err(Error::Config(format!(
                "replay needs an existing cache at {}",
                self.cache_path().display()
            ))),
            _ => Ok(()),
        }
    }

    pub fn dataset_paths(&self, name: &str) -> Result<&DatasetPaths> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset {name:?} is not defined under [datasets]")))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.backend
            .cache
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache").join("llm.jsonl"))
    }

    pub fn index_path(&self, dataset: &str) -> PathBuf {
        self.output_dir.join("index").join(format!("{dataset}.jsonl"))
    }

    pub fn dataset_dir(&self, dataset: &str) -> PathBuf {
        self.output_dir.join("datasets").join(dataset)
    }

    pub fn rerank_settings(&self) -> RerankSettings {
        RerankSettings {
            model: self.backend.model.clone(),
            max_passage_words: self.rerank.max_passage_words,
            temperature: self.rerank.temperature,
            max_output_tokens: self.rerank.max_output_tokens,
            on_error: self.rerank.on_error,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            ..self.optimizer.clone()
        }
    }

    /// Builds the completion client. `corpora` feed the simulated backend's
    /// hidden judgments and are ignored by every other backend.
    pub fn client(&self, corpora: &[&Corpus]) -> Result<LlmClient> {
        let b = &self.backend;
        let cache = || ResponseCache::open(self.cache_path()).map(Arc::new);
        let client = match b.kind {
            BackendKind::ReplayCacheOnly => {
                return Ok(LlmClient::replay(Arc::new(ResponseCache::open_read_only(self.cache_path())?)))
            }
            BackendKind::Http => {
                let endpoint = b
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("backend kind http requires `endpoint`".into()))?;
                LlmClient::new(Arc::new(HttpBackend::from_env(endpoint, Duration::from_secs(b.timeout_secs))?))
            }
            BackendKind::MockScripted => {
                if b.script.is_empty() {
                    return Err(Error::Config("backend kind mock_scripted requires a non-empty `script`".into()));
                }
                LlmClient::new(Arc::new(ScriptedBackend::new(b.script.clone())))
            }
            BackendKind::OracleSim => {
                let mut world = OracleWorld::new(b.oracle.clone())?;
                for c in corpora {
                    world.register_qrels(&c.queries, &c.collection, &c.qrels);
                }
                LlmClient::new(Arc::new(OracleBackend::new(world)))
            }
        };
        Ok(client
            .with_cache(cache()?)
            .with_retry(b.retry)
            .with_max_in_flight(b.max_in_flight))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
output_dir = "out"
dataset = "main"

[datasets.main]
queries = "q.tsv"
collection = "c.tsv"
qrels = "r.txt"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL, false).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.backend.kind, BackendKind::OracleSim);
        assert_eq!(c.rerank.plan(), WindowPlan::default());
        assert_eq!(c.optimizer.epochs, 3);
        assert_eq!(c.evaluate.cutoffs, vec![1, 5, 10]);
        assert_eq!(c.build.n, 100);
        assert_eq!(c.optimizer_config().seed, 7);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 7", "");
        assert!(matches!(RunConfig::parse(&text, false), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[rerank]\nwindow = 3\n");
        assert!(RunConfig::parse(&text, false).is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let c = RunConfig::parse(MINIMAL, false).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&json, true).unwrap(), c);
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap(), false).unwrap(), c);
    }

    #[test]
    fn missing_paths_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(&cfg, MINIMAL).unwrap();
        let c = RunConfig::from_file(&cfg).unwrap();
        assert_eq!(c.output_dir, dir.path().join("out"));
        match c.validate() {
            Err(Error::Config(m)) => assert!(m.contains("queries"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
