pub mod baselines;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod prompt;
pub mod reranker;
pub mod report;
pub mod retrieval;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
