use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use newsim_cli::commands::{self, Context, EvalSplit};
use newsim_cli::{CliError, CliResult, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "newsim", version, about = "Entity-enriched similarity scoring for multilingual news article pairs")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, default_value = "newsim.toml")]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads used for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter and split the pairs and documents.
    Ingest,
    /// Collect entity mentions for every document.
    ExtractEntities,
    /// Train the Siamese hashed encoder.
    TrainEncoder {
        /// Add the pseudo-labeled pairs from `self-label`.
        #[arg(long)]
        augmented: bool,
        /// Checkpoint name; defaults to `augmented` or `baseline`.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Sample BM25, random and translated candidate pairs.
    Augment,
    /// Pseudo-label the candidates with the baseline model.
    SelfLabel {
        #[arg(long, default_value = "baseline")]
        tag: String,
    },
    /// Train the fusion network on narrative and entity features.
    TrainFusion {
        #[arg(long, default_value = "baseline")]
        tag: String,
    },
    /// Predict every pair.
    Score {
        #[arg(long, default_value = "baseline")]
        tag: String,
        /// Use the encoder cosine alone.
        #[arg(long)]
        encoder_only: bool,
        /// Also write the five input features per pair.
        #[arg(long)]
        dump_features: bool,
    },
    /// Pearson overall and per language pair, plus serious mistakes.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// dev, test or all.
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Williams test that model A correlates better with the labels than model B.
    Significance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Run every stage in order.
    RunAll,
    /// Write a synthetic corpus and a matching config.
    GenerateFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
    },
}

fn load_context(cli: &Cli) -> CliResult<Context> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(Context::new(cfg))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::GenerateFixture { out, pairs } => {
            let path = commands::generate_fixture(out, *pairs, cli.seed.unwrap_or(7))?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Ingest => commands::ingest(&load_context(&cli)?)?,
        Command::ExtractEntities => commands::extract_entities(&load_context(&cli)?)?,
        Command::TrainEncoder { augmented, tag } => {
            let default = if *augmented { "augmented" } else { "baseline" };
            commands::train_encoder(&load_context(&cli)?, *augmented, tag.as_deref().unwrap_or(default))?
        }
        Command::Augment => commands::augment(&load_context(&cli)?)?,
        Command::SelfLabel { tag } => commands::self_label(&load_context(&cli)?, tag)?,
        Command::TrainFusion { tag } => commands::train_fusion(&load_context(&cli)?, tag)?,
        Command::Score {
            tag,
            encoder_only,
            dump_features,
        } => {
            let path = commands::score(&load_context(&cli)?, tag, *encoder_only, *dump_features)?;
            println!("{}", path.display());
        }
        Command::Evaluate { predictions, split } => {
            commands::evaluate(&load_context(&cli)?, predictions, EvalSplit::parse(split)?)?;
        }
        Command::Significance { a, b, split } => {
            commands::significance(&load_context(&cli)?, a, b, EvalSplit::parse(split)?)?;
        }
        Command::RunAll => {
            commands::run_all(&load_context(&cli)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
