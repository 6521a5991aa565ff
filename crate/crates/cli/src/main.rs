mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "refeval", version, about = "Build, score and evaluate reference-based text-to-image metrics")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration. Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Exit nonzero when any item is rejected or fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Image store root; overrides the config file.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Use the mock transport with this fixture file.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Training-data construction stages.
    #[command(subcommand)]
    Forge(Forge),
    /// Metric scoring.
    #[command(subcommand)]
    Score(Score),
    /// Meta-evaluation against annotations.
    #[command(subcommand)]
    Eval(Eval),
    /// Synthetic inputs for offline runs.
    #[command(subcommand)]
    Fixtures(Fixtures),
}

#[derive(Subcommand, Debug)]
pub enum Forge {
    /// Subject pairs from video scenes.
    Pairs {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identity-sensitive pairs from inpainting.
    Ident {
        #[arg(long)]
        subjects: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Positive, swap and hard-negative prompts for every pair target.
    Prompts {
        #[arg(long = "pairs", required = true)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join pairs and prompts into labeled triplets.
    Assemble {
        #[arg(long = "pairs", required = true)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every triplet instead of undersampling to equal class sizes.
        #[arg(long)]
        no_balance: bool,
    },
}

#[derive(Subcommand, Debug)]
pub enum Score {
    /// Score a triplet manifest or an instance file with one metric.
    Run {
        #[arg(long, conflicts_with = "instances", required_unless_present = "instances")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        /// token-pair, embed-sim or crop-ir.
        #[arg(long, default_value = "token-pair")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum Eval {
    /// Per-category ROC AUC with significance marks against a reference metric.
    Report {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        annotations: Option<PathBuf>,
        /// Use a triplet manifest's own labels as gold.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, default_value = "benchmark")]
        benchmark: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unified scores from a table of precomputed (ta, sp) AUC values.
    Compare {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "benchmark")]
        benchmark: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise preference accuracy per axis.
    Preference {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum Fixtures {
    /// Write a synthetic corpus (images, manifests, mock tables, run config).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Add gold entries for a manifest's triplets to a mock fixture file.
    Oracle {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mock: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("REFEVAL_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
