use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use swapq_cli::{run_experiment, ExperimentConfig, RunOptions};

/// Runs a demand-rate sweep experiment described by a TOML config file.
#[derive(Debug, Parser)]
#[command(name = "swapq", version)]
struct Args {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, default_value = "info")]
    log: String,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&args.log).format_timestamp(None).init();

    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            error!("--jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            error!("cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    let opts = RunOptions { out_dir: args.out, ..RunOptions::default() };
    match run_experiment(&cfg, &opts) {
        Ok(outcome) => {
            info!("wrote {} grids and {}", outcome.csv_files.len(), outcome.summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
