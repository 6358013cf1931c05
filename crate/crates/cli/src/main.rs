use std::path::PathBuf;
use std::process::ExitCode;

use addams_cli::{configure_threads, load_config, run, Command};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "addams", version, about = "Fit and analyse shared frailty models for clustered current-status data")]
struct Cli {
    #[command(subcommand)]
    command: Action,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, overriding `output` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Action {
    /// Maximum-likelihood fit of the configured model.
    Fit(Common),
    /// Emit a synthetic dataset from the configured model.
    Simulate(Common),
    /// Risk-category tables, hazard ratios and trajectory plot data.
    Analyze(Common),
    /// Likelihood-ratio test of a pinned null against the configured model.
    Lrt(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Action::Fit(c) => (Command::Fit, c),
        Action::Simulate(c) => (Command::Simulate, c),
        Action::Analyze(c) => (Command::Analyze, c),
        Action::Lrt(c) => (Command::Lrt, c),
    };
    let result = configure_threads()
        .and_then(|_| load_config(&common.config, &common.set, common.output.as_deref()))
        .and_then(|config| run(command, &config));
    match result {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("addams: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
