use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(about = "Drone feed tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stream a recorded feed directory to a running service at its
    /// original timing, scaled by `speed`.
    Replay {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Service base URL, e.g. http://127.0.0.1:8080
        #[arg(long)]
        target: String,
        /// Feed key; falls back to $DARTS_FEED_KEY.
        #[arg(long)]
        key: Option<String>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    darts_cli::init_logging();
    let Cmd::Replay { dir, speed, target, key } = Cli::parse().cmd;
    let key = key.or_else(|| std::env::var("DARTS_FEED_KEY").ok()).unwrap_or_default();
    let (stats, report) = darts_service::replay_dir(&dir, speed, &target, &key).await?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "replay": stats, "ingest": report }))?);
    Ok(())
}
