use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(about = "Traffic and patrol-flight simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write its drone feed and ground truth.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> anyhow::Result<()> {
    darts_cli::init_logging();
    match Cli::parse().cmd {
        Cmd::Run { scenario, out, seed } => {
            let video = darts_cli::run_sim(&scenario, &out, seed)?;
            println!(
                "{}: {} frames, {} gps fixes -> {}",
                video.name,
                video.feed.frames.len(),
                video.feed.gps.len(),
                out.display()
            );
        }
    }
    Ok(())
}
