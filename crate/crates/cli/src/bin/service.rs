use std::path::PathBuf;

use clap::{Parser, Subcommand};
use darts_service::{AppState, Service, ServiceConfig};

#[derive(Parser)]
#[command(about = "Live detection service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the HTTP API until interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    darts_cli::init_logging();
    let Cmd::Run { config } = Cli::parse().cmd;
    let config = ServiceConfig::load(&config)?;
    let service = Service::from_config(&config)?;
    let state = AppState::from_config(service, &config);
    darts_service::serve(state, config.bind, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
