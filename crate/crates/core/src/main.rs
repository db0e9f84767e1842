use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aie_core::batch::{self, Execution};
use aie_core::pipeline;
use aie_core::{Error, Result};

/// Adaptive input estimation for the surge and heading channels of a small
/// marine vehicle.
#[derive(Parser, Debug)]
#[command(name = "aie", version)]
struct Cli {
    /// TOML run configuration (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    /// Seed override: `7`, `1,2,5` or a range `0..10` / `0..=9`. Several seeds
    /// run concurrently, each into `<output-dir>/seed-<n>`.
    #[arg(long, global = true)]
    seed: Option<String>,

    /// Run batches on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a run and write sensor.csv and truth.csv.
    Simulate,
    /// Fit step-response CSV files and write fit.toml.
    Sysid {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Run AIE and the fixed-input baseline over a sensor log.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Simulator truth file used as the reference instead of the measurements.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Dead-reckon the measured increments of a sensor log.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare two estimate output directories (A then B). Exits with 4 when
    /// B is better on any metric.
    Compare {
        #[arg(long, num_args = 1, required = true)]
        input: Vec<PathBuf>,
    },
}

const EXIT_B_WINS: u8 = 4;

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse seed list `{spec}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = spec.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn run(cli: Cli) -> Result<u8> {
    let mut config = pipeline::load_config(cli.config.as_deref())?;
    let seeds = cli.seed.as_deref().map(parse_seeds).transpose()?;
    if let Some(s) = &seeds {
        config.seed = s[0];
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let out = cli.output_dir.as_path();

    match cli.command {
        Command::Simulate => match seeds {
            Some(seeds) if seeds.len() > 1 => {
                batch::try_map(&seeds, exec, |&s| {
                    let mut c = config.clone();
                    c.seed = s;
                    pipeline::simulate_to_dir(&c, s, &out.join(format!("seed-{s}")))
                })?;
            }
            _ => {
                pipeline::simulate_to_dir(&config, config.seed, out)?;
            }
        },
        Command::Sysid { input } => {
            pipeline::sysid_to_dir(&config, &input, out, exec)?;
        }
        Command::Estimate { input, truth } => {
            single_seed(&seeds)?;
            pipeline::estimate_to_dir(&config, &input, truth.as_deref(), out)?;
        }
        Command::Reconstruct { input } => {
            pipeline::reconstruct_to_dir(&config, &input, out)?;
        }
        Command::Compare { input } => {
            let [a, b] = input.as_slice() else {
                return Err(Error::InvalidArgument(
                    "compare needs exactly two --input directories".into(),
                ));
            };
            let cmp = pipeline::compare_to_dir(a, b, out)?;
            if cmp.b_wins_any() {
                return Ok(EXIT_B_WINS);
            }
        }
    }
    Ok(0)
}

fn single_seed(seeds: &Option<Vec<u64>>) -> Result<()> {
    match seeds {
        Some(s) if s.len() > 1 => Err(Error::InvalidArgument(
            "this subcommand takes a single seed".into(),
        )),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("aie: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
