use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use latent_alpha_cli::{cmd_calibrate, cmd_filter, cmd_simulate, CliError, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Calibrate,
    Filter,
}

/// Optimal execution under a latent alpha.
#[derive(Debug, Parser)]
#[command(name = "latent-alpha", version)]
struct Args {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Price data with header `day,t,F` (calibrate, filter).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// State counts to fit, e.g. `1..3` or `2,4`.
    #[arg(long)]
    states: Option<String>,
}

fn run(args: Args) -> Result<Vec<PathBuf>, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let ov = Overrides {
        out: args.out,
        seed: args.seed,
        paths: args.paths,
        states: args.states,
    };
    let data = || {
        args.data
            .clone()
            .ok_or_else(|| CliError::Config("this command needs --data".into()))
    };
    match args.command {
        Command::Simulate => cmd_simulate(&cfg, &ov),
        Command::Calibrate => cmd_calibrate(&cfg, &data()?, &ov),
        Command::Filter => cmd_filter(&cfg, &data()?, &ov),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
