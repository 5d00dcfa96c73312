use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apeer::commands::{cmd_build_dataset, cmd_evaluate, cmd_index, cmd_optimize, cmd_transfer};
use apeer::config::RunConfig;
use apeer::llm::BackendKind;

#[derive(Parser)]
#[command(name = "apeer", version, about = "Prompt optimization for listwise LLM passage reranking")]
struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true, default_value = "apeer.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured backend: http, replay_cache_only, mock_scripted, oracle_sim.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the BM25 index of the configured dataset.
    Index,
    /// Sample queries and write the training and validation instances.
    BuildDataset,
    /// Search for a better ranking prompt; resumes from the latest checkpoint.
    Optimize,
    /// Score baselines and prompt files with BM25 plus listwise reranking.
    Evaluate {
        /// Prompt files to score next to the baselines.
        #[arg(long = "prompt")]
        prompts: Vec<PathBuf>,
        /// Dataset name from the config (defaults to the configured one).
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Score an optimized prompt on another dataset without re-optimizing.
    Transfer {
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        target: String,
    },
}

fn run(cli: Cli) -> apeer::Result<()> {
    let mut config = RunConfig::from_file(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(kind) = cli.backend {
        config.backend.kind = kind;
    }
    match cli.command {
        Command::Index => println!("{}", cmd_index(&config)?.line()),
        Command::BuildDataset => {
            let s = cmd_build_dataset(&config)?;
            println!(
                "wrote {} training instances to {} and {} validation instances to {}",
                s.train,
                s.train_path.display(),
                s.val,
                s.val_path.display()
            );
        }
        Command::Optimize => {
            let s = cmd_optimize(&config)?;
            println!(
                "best prompt {} (validation nDCG@{} {:.4}) written to {}",
                s.best.id,
                config.optimizer.cutoff,
                s.best.score.unwrap_or(0.0),
                s.best_path.display()
            );
        }
        Command::Evaluate { prompts, dataset } => {
            let out = cmd_evaluate(&config, &prompts, dataset.as_deref())?;
            print!("{}", out.report.to_text());
            println!("reports and run files in {}", out.report_dir.display());
        }
        Command::Transfer { prompt, target } => {
            let out = cmd_transfer(&config, &prompt, &target)?;
            print!("{}", out.report.to_text());
            println!("reports and run files in {}", out.report_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
