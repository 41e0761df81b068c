use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(about = "Train, evaluate and sweep the congestion classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train and write the checkpoint, then report test metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Test-split metrics of an existing checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one model per extraction period and image mode.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    darts_cli::init_logging();
    match Cli::parse().cmd {
        Cmd::Train { config } => {
            let c = darts_cli::TcdnetConfig::load(&config)?;
            let r = darts_cli::cmd_train(&c)?;
            println!("split sizes (train/val/test): {:?}", r.sizes);
            println!("best epoch {} of {}{}", r.best_epoch, r.history.len(), if r.stopped_early { " (early stop)" } else { "" });
            println!("{}", r.test.to_text());
            println!("checkpoint: {}", c.checkpoint.display());
        }
        Cmd::Eval { config } => {
            let c = darts_cli::TcdnetConfig::load(&config)?;
            println!("{}", darts_cli::cmd_eval(&c)?.to_text());
        }
        Cmd::Sweep { config } => {
            let c = darts_cli::TcdnetConfig::load(&config)?;
            let (_, table, notes) = darts_cli::cmd_sweep(&c)?;
            println!("{table}");
            for n in notes {
                println!("- {n}");
            }
        }
    }
    Ok(())
}
