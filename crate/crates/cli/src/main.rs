use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod exit;

#[derive(Parser, Debug)]
#[command(name = "proptail", version, about = "Extreme quantile regression under proportional tails")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from a tail model.
    Generate(CommonArgs),
    /// Estimate the tail index, skedasis and extreme quantiles from a CSV sample.
    Estimate(CommonArgs),
    /// Build the exceedance coupling on a discrete-covariate model and check it.
    Coupling(CommonArgs),
    /// Run Monte Carlo validation experiments.
    Validate(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// key = value configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&CommonArgs) -> Result<(), exit::CliError>) = match &cli.command {
        Command::Generate(a) => (a, commands::generate),
        Command::Estimate(a) => (a, commands::estimate),
        Command::Coupling(a) => (a, commands::coupling),
        Command::Validate(a) => (a, commands::validate),
    };
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
