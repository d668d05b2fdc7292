use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ivmap_cli::commands::{run, SUBCOMMANDS};
use ivmap_cli::config::{parse_overrides, ExperimentConfig};
use ivmap_cli::error::CliError;

/// i-vector extraction, PLDA scoring and short-to-long i-vector mapping.
#[derive(Parser, Debug)]
#[command(name = "ivmap", version, after_help = subcommand_help())]
struct Args {
    /// Subcommand to run.
    subcommand: String,
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, short)]
    config: PathBuf,
    /// Configuration overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn subcommand_help() -> String {
    format!("Subcommands: {}", SUBCOMMANDS.join(", "))
}

fn execute(args: &Args) -> Result<PathBuf, CliError> {
    let overrides = parse_overrides(&args.overrides)?;
    let cfg = ExperimentConfig::load(&args.config, &overrides)?;
    run(&args.subcommand, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match execute(&args) {
        Ok(manifest) => {
            log::info!("manifest written to {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
