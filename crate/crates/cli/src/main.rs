use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgsae_cli::{exit, run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "pgsae", version, about = "Pseudo-likelihood small-area estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config leaf, e.g. `--set mcmc.burnin=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a binomial or multinomial model to a survey sample.
    Fit(Common),
    /// Poststratify fitted draws over a population frame.
    Predict(Common),
    /// Score estimators under repeated informative sampling.
    Simulate(Common),
    /// Generate a synthetic population.
    Synthpop(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Predict(c) => (Command::Predict, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Synthpop(c) => (Command::Synthpop, c),
    };
    let result = RunConfig::load(&common.config, &common.overrides).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(summary) => {
            println!("{} run {} wrote {} files to {}", command.name(), summary.run, summary.files.len(), summary.output.display());
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
