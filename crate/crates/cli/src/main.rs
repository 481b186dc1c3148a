//! `comatch`: the command-line front end of the decision-fusion pipeline.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid data, 4 environment.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{fuse, gen, protoem, serve, simulate};
use config::FileConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "comatch", version, about = "Human-machine decision fusion for collaborative text matching")]
struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Gen(gen::GenArgs),
    Protoem(protoem::ProtoemArgs),
    Fuse(fuse::FuseArgs),
    Simulate(simulate::SimulateArgs),
    Serve(serve::ServeArgs),
}

fn run(cli: Cli) -> CliResult {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => gen::run(a, &cfg),
        Command::Protoem(a) => protoem::run(a, &cfg),
        Command::Fuse(a) => fuse::run(a, &cfg),
        Command::Simulate(a) => simulate::run(a, &cfg),
        Command::Serve(a) => serve::run(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("comatch: {}", e.message());
            e.exit_code()
        }
    }
}
