use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use snlse_lab::config::{load_config, ConfigSources, Experiment};
use snlse_lab::experiments::execute;
use snlse_lab::LabError;

/// Numerical experiments for the stochastic cubic Schrödinger integrators.
#[derive(Debug, Parser)]
#[command(name = "snlse-lab", version)]
struct Cli {
    experiment: Experiment,

    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set stats.paths=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Parameter profile: `desk` or `full`.
    #[arg(long)]
    profile: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    workers: Option<usize>,

    /// Output directory; also settable through `SNLSE_LAB_OUT`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn report(error: &LabError) -> ExitCode {
    eprintln!("error[{}]: {error}", error.kind());
    let mut source = std::error::Error::source(error);
    while let Some(cause) = source {
        eprintln!("  caused by: {cause}");
        source = cause.source();
    }
    ExitCode::from(error.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.overrides;
    if let Some(profile) = cli.profile {
        overrides.push(format!("profile=\"{profile}\""));
    }
    let sources = ConfigSources {
        file: cli.config,
        overrides,
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        env_out: None,
    }
    .with_env();
    let loaded = match load_config(cli.experiment, &sources) {
        Ok(l) => l,
        Err(e) => return report(&e),
    };
    match execute(&loaded) {
        Ok(outcome) => {
            for path in &outcome.outputs {
                println!("wrote {}", path.display());
            }
            for note in &outcome.notes {
                println!("{note}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
