//! `epgp-sim`: scripted scenarios and randomized fuzzing of the delivery
//! protocol with the invariant monitor attached. Exits 0 iff everything
//! passes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epgp::harness::{fuzz_protocol, run_scenario, Scenario};

#[derive(Debug, Parser)]
#[command(name = "epgp-sim", version, about = "Protocol simulator and invariant checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and check its expectations.
    Run {
        file: PathBuf,
        /// Overrides the seed given in the file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Random interleavings of honest and adversarial calls.
    Fuzz {
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let passed = match Cli::parse().command {
        Command::Run { file, seed } => {
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", file.display());
                    return ExitCode::from(2);
                }
            };
            let mut scenario = match Scenario::parse(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}: {e}", file.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let report = run_scenario(&scenario);
            println!("{report}");
            report.passed()
        }
        Command::Fuzz { iters, seed } => {
            let summary = fuzz_protocol(iters, seed);
            println!("{summary}");
            summary.passed()
        }
    };
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
