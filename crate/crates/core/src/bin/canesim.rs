use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use canesim::output::{emit_run, emit_sweep};
use canesim::scenario::load_scenario;
use canesim::sim::run;
use canesim::sweep::{run_sweep, SweepSpec};

#[derive(Parser)]
#[command(name = "canesim", version, about = "Sugar supply chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write timeseries.csv and manifest.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "CANESIM_OUT_DIR")]
        out: PathBuf,
    },
    /// Vary one lever over values and seeds; write sweep.csv and plot files.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted parameter path, e.g. policy.frp
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = "CANESIM_OUT_DIR")]
        out: PathBuf,
    },
    /// Load and check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("canesim: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> canesim::Result<()> {
    match command {
        Command::Run { scenario, steps, seed, out } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(s) = steps {
                config.steps = s;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let frames = run(&config)?;
            for path in emit_run(&config, &frames, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Sweep { scenario, param, values, seeds, jobs, out } => {
            let spec = SweepSpec { base: load_scenario(&scenario)?, param, values, seeds };
            let table = run_sweep(&spec, jobs)?;
            for row in table.failures() {
                eprintln!(
                    "canesim: run value={} seed={} failed: {}",
                    row.value,
                    row.seed,
                    row.error.as_deref().unwrap_or_default()
                );
            }
            for path in emit_sweep(&spec, &table, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Validate { scenario } => {
            let config = load_scenario(&scenario)?;
            println!(
                "{}: ok ({} farmers, {} crops, {} steps)",
                scenario.display(),
                config.population.size,
                config.crops.len(),
                config.steps
            );
        }
    }
    Ok(())
}
