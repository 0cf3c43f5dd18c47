mod args;
mod commands;
mod error;
mod serve;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

async fn run(cli: Cli) -> Result<Option<String>, CliError> {
    let output = match cli.command {
        Command::ServeBroker { config } => {
            serve::broker(&config).await?;
            None
        }
        Command::ServeProvider { config } => {
            serve::provider(&config).await?;
            None
        }
        Command::Index { broker, format } => Some(commands::index(&broker, format).await?),
        Command::Query {
            session,
            image,
            k,
            mode,
            format,
        } => Some(commands::query(&session, &image, k, mode, format).await?),
        Command::Retrieve {
            session,
            id,
            license,
            purchaser,
            out,
            format,
        } => Some(commands::retrieve(&session, &id, license.as_deref(), &purchaser, &out, format).await?),
        Command::ExtractFeature { image, format } => Some(commands::extract(&image, format)?),
        Command::Bench {
            config,
            queries,
            seed,
            out,
            mode,
        } => Some(commands::bench(config.as_deref(), queries, seed, out.as_deref(), mode).await?),
    };
    Ok(output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(error::EXIT_OTHER);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(output) => {
            if let Some(text) = output {
                print!("{text}");
                if !text.ends_with('\n') {
                    println!();
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
