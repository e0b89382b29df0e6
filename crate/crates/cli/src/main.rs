use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use doa_core::harness::{run, Experiment, ExperimentConfig, RunOptions};
use doa_core::Error;

/// Run a seeded Monte Carlo experiment and write its CSV files.
#[derive(Parser, Debug)]
#[command(name = "doa-lab", version)]
struct Args {
    /// roc, rmse-snr, rmse-eta, loss-bits or train-mlnn
    experiment: String,

    /// TOML configuration; absent keys take the experiment's defaults.
    #[arg(long)]
    config: PathBuf,

    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,

    /// Model file written by train-mlnn and read by roc
    /// (default: <out>/mlnn.json).
    #[arg(long)]
    model: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_numerical() => 3,
        Error::Io(_) | Error::Csv(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = args.experiment.parse::<Experiment>().and_then(|experiment| {
        let mut cfg = ExperimentConfig::load(experiment, &args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let workers = args
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let opts = RunOptions { out_dir: args.out.clone(), workers, model: args.model.clone() };
        log::info!("{} seed {} digest {} on {workers} workers", experiment, cfg.seed, cfg.digest());
        run(&cfg, &opts)
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("doa-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
