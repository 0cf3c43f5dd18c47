use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cbir", version, about = "Distributed texture-based image retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a broker until interrupted.
    ServeBroker {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a provider until interrupted.
    ServeProvider {
        #[arg(long)]
        config: PathBuf,
    },
    /// Make the broker re-dispatch index agents to every provider.
    Index {
        #[arg(long)]
        broker: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Open a parked session with a query image and print the ranking.
    Query {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(short = 'k', long = "k", default_value_t = 10)]
        k: u32,
        #[arg(long, value_enum, default_value_t = Mode::Messages)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Fetch a full, watermarked image through a search agent.
    Retrieve {
        #[command(flatten)]
        session: SessionArgs,
        /// `<provider url>/<image id>`
        #[arg(long)]
        id: String,
        #[arg(long)]
        license: Option<String>,
        #[arg(long)]
        purchaser: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Print an image's texture feature vector.
    ExtractFeature {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Compare the three client strategies over a slow link.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BenchMode::Simulated)]
        mode: BenchMode,
    },
}

/// Identity used to sign agents sent to the broker.
#[derive(Debug, Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub broker: String,
    #[arg(long, default_value = "client")]
    pub principal: String,
    /// File holding the secret shared with the broker.
    #[arg(long)]
    pub secret_file: PathBuf,
    #[arg(long, default_value = "broker")]
    pub broker_principal: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Messenger,
    Messages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Simulated,
    Integration,
}
