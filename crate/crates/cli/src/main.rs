mod aggregate;
mod coarsen;
mod trace;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use civitrace_core::sim::{run_scenario, sweep, sweep_csv, ConfigError, Intervention, ScenarioConfig, SweepSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "civitrace", version, about = "Privacy-preserving tracing simulator and protocol demos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, hotspots.json, events.log and summary.json.
    Simulate {
        /// Scenario config (JSON). Defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// none, contact or contact+location
        #[arg(long)]
        mode: Option<Intervention>,
    },
    /// Run a parameter sweep and write sweep.csv.
    Sweep {
        /// Sweep spec (JSON): a base scenario plus lists of values to vary.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the intervention list with this single mode.
        #[arg(long)]
        mode: Option<Intervention>,
    },
    /// Synthesize encounters, mark user 0 positive, match in both tracing modes.
    TraceDemo {
        #[arg(long, default_value_t = 5)]
        users: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = trace::Colocation::Random)]
        colocation: trace::Colocation,
        #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..=14))]
        days: u64,
    },
    /// Securely aggregate random count vectors and compare with the plaintext sum.
    AggregateDemo {
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=65536))]
        participants: u64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        dimension: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Coarsen a synthetic trajectory at every grid and bin size.
    CoarsenDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

pub enum CliError {
    /// Bad arguments or config; exit code 2.
    Usage(String),
    /// Anything that went wrong after the inputs were accepted; exit code 1.
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("config: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn simulate(config: Option<PathBuf>, out: &Path, seed: Option<u64>, mode: Option<Intervention>) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => ScenarioConfig::from_json(&read_config(&path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(mode) = mode {
        cfg.intervention = mode;
    }
    let output = run_scenario(cfg)?;
    output.write_to(out)?;
    let m = &output.metrics;
    println!(
        "attack rate {:.3}, {} infections ({} contact, {} fomite), {} reports, {} location uploads",
        m.attack_rate, m.infections, m.contact_infections, m.fomite_infections, m.reports_published, m.location_uploads
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_sweep(config: Option<PathBuf>, out: &Path, seed: Option<u64>, mode: Option<Intervention>) -> Result<(), CliError> {
    let mut spec = match config {
        Some(path) => SweepSpec::from_json(&read_config(&path)?)?,
        None => SweepSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seeds = vec![seed];
    }
    if let Some(mode) = mode {
        spec.interventions = vec![mode];
    }
    let rows = sweep(&spec).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&rows))?;
    println!("{} runs, wrote {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed, mode } => simulate(config, &out, seed, mode),
        Command::Sweep { config, out, seed, mode } => run_sweep(config, &out, seed, mode),
        Command::TraceDemo {
            users,
            out,
            seed,
            colocation,
            days,
        } => {
            if users < 2 {
                return Err(CliError::Usage(format!("--users must be at least 2, got {users}")));
            }
            trace::run(users, days, colocation, seed, &out)
        }
        Command::AggregateDemo {
            participants,
            dimension,
            out,
            seed,
        } => aggregate::run(participants as usize, dimension as usize, seed, &out),
        Command::CoarsenDemo { out, seed } => coarsen::run(seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
