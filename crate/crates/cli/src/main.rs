mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xdcl::config::EncoderKind;
use xdcl::strategy::StrategyChoice;

/// Cross-domain sentiment training with domain-aware contrastive learning.
#[derive(Debug, Parser)]
#[command(name = "xdcl", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a config value, e.g. `--set train.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides `encoder.kind`.
    #[arg(long, value_enum, global = true)]
    pub encoder: Option<EncoderArg>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncoderArg {
    Toy,
    Pretrained,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Toy => EncoderKind::Toy,
            EncoderArg::Pretrained => EncoderKind::Pretrained,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Auto,
    PooledEntropy,
    InDomain,
    Both,
    Neither,
}

impl From<StrategyArg> for StrategyChoice {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => StrategyChoice::Auto,
            StrategyArg::PooledEntropy => StrategyChoice::PooledEntropy,
            StrategyArg::InDomain => StrategyChoice::InDomain,
            StrategyArg::Both => StrategyChoice::Both,
            StrategyArg::Neither => StrategyChoice::Neither,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    #[value(name = "back-translation", alias = "bt")]
    BackTranslation,
    #[value(name = "synonym", alias = "ss")]
    Synonym,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReducerArg {
    Tsne,
    Pca,
}

/// Where the two domains' data comes from. Flags override `data.*`.
#[derive(Debug, Args)]
pub struct DomainArgs {
    /// Source corpus (JSONL).
    #[arg(long)]
    pub source: Option<PathBuf>,

    /// Target corpus (JSONL).
    #[arg(long)]
    pub target: Option<PathBuf>,

    #[arg(long)]
    pub source_domain: Option<String>,

    #[arg(long)]
    pub target_domain: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the label-distribution shift and print the recommended strategy.
    AnalyzeShift {
        #[command(flatten)]
        domains: DomainArgs,

        /// Known target positive:negative ratio.
        #[arg(long)]
        target_ratio: Option<f64>,

        /// Labeled corpus whose labels give the target ratio.
        #[arg(long)]
        target_labels: Option<PathBuf>,

        /// Overrides `strategy.threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },

    /// Precompute augmented views of a corpus.
    Augment {
        /// Corpus to augment (defaults to `data.source`).
        #[arg(long)]
        corpus: Option<PathBuf>,

        #[arg(long)]
        domain: Option<String>,

        /// Overrides `augment.method`.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,

        /// External translator command; the identity translator is used
        /// when omitted.
        #[arg(long)]
        translator: Option<String>,

        /// Back-translation cache directory (defaults to `data.bt_cache`,
        /// then `$XDCL_CACHE_DIR/back-translation`).
        #[arg(long)]
        cache: Option<PathBuf>,
    },

    /// Train a model.
    Train {
        #[command(flatten)]
        domains: DomainArgs,

        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,

        /// Permit the `both` and `neither` strategies.
        #[arg(long)]
        allow_ablation: bool,

        /// Epoch checkpoint directory to continue from.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,

        #[arg(long)]
        target_ratio: Option<f64>,
    },

    /// Evaluate a checkpoint on a labeled test corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,

        /// Labeled test corpus (defaults to `data.test`).
        #[arg(long)]
        test: Option<PathBuf>,

        #[arg(long)]
        domain: Option<String>,
    },

    /// Export a 2-D projection of source and target hidden representations.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,

        #[command(flatten)]
        domains: DomainArgs,

        #[arg(long, value_enum, default_value = "tsne")]
        reducer: ReducerArg,

        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,

        #[arg(long, default_value_t = 1000)]
        iterations: usize,

        #[arg(long, default_value_t = 0.5)]
        theta: f64,
    },

    /// Write a synthetic two-domain dataset plus a matching config.
    Synth {
        /// Positive:negative ratio of the unlabeled target pool.
        #[arg(long, default_value_t = 1.0)]
        target_ratio: f64,

        #[arg(long, default_value_t = 2000)]
        n_source: usize,

        #[arg(long, default_value_t = 3000)]
        n_target: usize,

        #[arg(long, default_value_t = 1000)]
        n_test: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
