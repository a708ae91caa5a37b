//! Command-line experiment runner. `FEDHAP_LOG={error|info|debug}` controls
//! verbosity (default info).

use clap::{Parser, Subcommand};
use fedhap::runner::{execute_run, execute_sweep, generate_data_file, RunConfig, SweepAxis};
use fedhap::Result;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fedhap",
    about = "Federated supervised hashing: training, sweeps and retrieval reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        /// Path to the run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Client-parallelism degree (default: min(clients, CPUs)).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: config's `out`, else ./fedhap-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the base config once per axis value and emit a comparison CSV.
    Sweep {
        /// Path to the base run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// What to vary: ablation, clients, bits or distance.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. `full,no_prototypes`.
        #[arg(long)]
        values: String,
        /// Output directory (default: config's `out`, else ./fedhap-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset CSV from a spec (JSON).
    GenData {
        /// Path to the synthetic spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_out(cli_out: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli_out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("fedhap-out"))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            jobs,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.federation.seed = seed;
            }
            let out_dir = resolve_out(out, &cfg);
            execute_run(&cfg, &out_dir, jobs)?;
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let out_dir = resolve_out(out, &cfg);
            execute_sweep(&cfg, axis, &values, &out_dir, None)?;
            Ok(())
        }
        Command::GenData { spec, out } => generate_data_file(Path::new(&spec), Path::new(&out)),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDHAP_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
