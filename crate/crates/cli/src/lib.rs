//! Command-line front end: argument parsing, config loading and exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use genetic_prompt_core::{CorpusError, EvolutionError, GeneError, GenerationError, MetricsError, SelectionError, Strategy};
use genetic_prompt_core::providers::ProviderError;

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(
    name = "genetic-prompt",
    version,
    about = "Generate synthetic labeled text by LLM crossover and mutation of textual genes",
    after_help = "Exit codes: 0 success, 1 other failure, 2 invalid config or input, \
                  3 provider failure, 4 rejection budget or parent pairs exhausted, 5 i/o or checkpoint failure.\n\
                  HTTP providers read their bearer token from GENETIC_PROMPT_API_KEY."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ask the generation provider for candidate genes of a dataset
    IdentifyGenes {
        #[arg(long)]
        config: PathBuf,

        /// Gold dataset (default: dataset.gold from the config)
        #[arg(long)]
        gold: Option<PathBuf>,

        /// Number of gold samples shown to the provider
        #[arg(long, default_value_t = 5)]
        samples: usize,
    },

    /// Run the evolution loop and write a synthetic dataset
    Generate {
        #[arg(long)]
        config: PathBuf,

        /// Gold dataset (default: dataset.gold from the config)
        #[arg(long)]
        gold: Option<PathBuf>,

        /// Output dataset (JSON lines)
        #[arg(long)]
        out: PathBuf,

        /// Continue from this checkpoint and keep writing to it
        #[arg(long, conflicts_with = "checkpoint")]
        resume: Option<PathBuf>,

        /// Checkpoint file (default: <out>.checkpoint.jsonl)
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        /// Override run.strategy
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,

        /// Override run.target_per_label
        #[arg(long)]
        n: Option<usize>,

        /// Override run.seed
        #[arg(long)]
        seed: Option<u64>,

        /// Labels evolved in parallel (default: number of labels)
        #[arg(long)]
        max_concurrency: Option<usize>,
    },

    /// Diversity metrics of a synthetic dataset, with CMD against gold
    Metrics {
        #[arg(long)]
        config: PathBuf,

        /// Synthetic dataset to score
        #[arg(long)]
        synthetic: PathBuf,

        /// Reference dataset (default: dataset.gold from the config)
        #[arg(long)]
        gold: Option<PathBuf>,

        /// Skip CMD; gold becomes optional
        #[arg(long)]
        no_cmd: bool,

        /// Report file (default: <synthetic>.metrics.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Check a config file without touching the network
    Validate {
        /// Config file to check
        config: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Genetic,
    Simprompt,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Genetic => Strategy::Genetic,
            StrategyArg::Simprompt => Strategy::SimPrompt,
        }
    }
}

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;
pub const EXIT_EXHAUSTED: u8 = 4;
pub const EXIT_IO: u8 = 5;

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn selection_code(e: &SelectionError) -> u8 {
    match e {
        SelectionError::PairsExhausted { .. } => EXIT_EXHAUSTED,
        SelectionError::PoolTooSmall { .. } | SelectionError::DuplicateId(_) | SelectionError::UnknownId(_) => EXIT_CONFIG,
        // Bad vectors come from the embedding provider.
        _ => EXIT_PROVIDER,
    }
}

fn generation_code(e: &GenerationError) -> u8 {
    match e {
        GenerationError::EmptyPrompt => EXIT_OTHER,
        _ => EXIT_PROVIDER,
    }
}

fn evolution_code(e: &EvolutionError) -> u8 {
    match e {
        EvolutionError::InvalidConfig(_)
        | EvolutionError::InsufficientGold { .. }
        | EvolutionError::Template(_)
        | EvolutionError::ConfigMismatch(_) => EXIT_CONFIG,
        EvolutionError::Gene(g) => gene_code(g),
        EvolutionError::Corpus(c) => corpus_code(c),
        EvolutionError::RejectionBudgetExceeded { .. } => EXIT_EXHAUSTED,
        EvolutionError::Selection { source, .. } => selection_code(source),
        EvolutionError::Generation { source, .. } => generation_code(source),
        EvolutionError::CheckpointCorrupt(_) => EXIT_IO,
        EvolutionError::Halted { .. } | EvolutionError::Cancelled => EXIT_OTHER,
    }
}

fn gene_code(e: &GeneError) -> u8 {
    match e {
        GeneError::Generation(g) => generation_code(g),
        GeneError::ParseFailure => EXIT_PROVIDER,
        _ => EXIT_CONFIG,
    }
}

fn metrics_code(e: &MetricsError) -> u8 {
    match e {
        MetricsError::Embedding(s) => selection_code(s),
        _ => EXIT_CONFIG,
    }
}

/// Maps an error to the documented exit status. The outermost recognised
/// error in the chain decides.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<EvolutionError>() {
            return evolution_code(e);
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return metrics_code(e);
        }
        if let Some(e) = cause.downcast_ref::<GeneError>() {
            return gene_code(e);
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return corpus_code(e);
        }
        if cause.is::<ProviderError>() {
            return EXIT_PROVIDER;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::IdentifyGenes { config, gold, samples } => commands::identify_genes(&config, gold.as_deref(), samples),
        Command::Generate {
            config,
            gold,
            out,
            resume,
            checkpoint,
            strategy,
            n,
            seed,
            max_concurrency,
        } => commands::generate(&commands::GenerateArgs {
            config,
            gold,
            out,
            resume,
            checkpoint,
            strategy: strategy.map(Strategy::from),
            n,
            seed,
            max_concurrency,
        }),
        Command::Metrics {
            config,
            synthetic,
            gold,
            no_cmd,
            report,
        } => commands::metrics(&config, &synthetic, gold.as_deref(), no_cmd, report.as_deref()),
        Command::Validate { config } => commands::validate(&config),
    }
}
