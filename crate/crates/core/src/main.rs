use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsgd_catalyst::harness::{self, ExperimentConfig, Overrides};
use dsgd_catalyst::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "dsgd-catalyst", version, about = "Decentralized SGD and Catalyst-DSGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver and write its trajectories.
    Run(Common),
    /// Run DSGD and Catalyst-DSGD per seed and write a comparison report.
    Compare(Common),
    /// Print the declared (tau, p) and the Monte Carlo verdict.
    EstimateP(Common),
    /// Comparison over a grid of condition numbers, targets and noise levels.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; replicate r uses seed + r.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    replicates: Option<usize>,
    #[arg(long, value_name = "N")]
    max_rounds: Option<u64>,
}

fn load(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    Overrides {
        seed: c.seed,
        out: c.out.clone(),
        replicates: c.replicates,
        max_rounds: c.max_rounds,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, cmd): (&Common, fn(&ExperimentConfig) -> dsgd_catalyst::Result<harness::CommandOutcome>) =
        match &cli.command {
            Command::Run(c) => (c, harness::cmd_run),
            Command::Compare(c) => (c, harness::cmd_compare),
            Command::EstimateP(c) => (c, harness::cmd_estimate_p),
            Command::Sweep(c) => (c, harness::cmd_sweep),
        };
    let cfg = match load(common) {
        Ok(cfg) => cfg,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
        Err(e) => {
            eprintln!("error: cannot load {}: {e}", common.config.display());
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    match cmd(&cfg) {
        Ok(out) => {
            println!("{}", out.summary);
            if out.unreachable {
                eprintln!(
                    "target not reached within {} rounds; partial results written to {}",
                    cfg.output.max_rounds,
                    cfg.output.dir.display()
                );
                ExitCode::from(EXIT_UNREACHABLE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
