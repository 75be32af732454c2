use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use secure_irs::harness::{emit, emit_raw, run_experiment, ExperimentConfig, HarnessError, OutputFormat};
use secure_irs::Execution;

/// Run one experiment preset and write its summary rows.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Cli {
    /// Experiment config (JSON).
    config: PathBuf,

    /// Output file. Defaults to `<out-dir>/<id>.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Directory used when `--out` is not given.
    #[arg(long, env = "IRS_SIM_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,

    #[arg(long, default_value = "csv")]
    format: OutputFormat,

    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Also write per-trial samples next to the output as `<stem>.raw.csv`.
    #[arg(long)]
    emit_raw: bool,

    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

fn run(cli: Cli) -> Result<PathBuf, HarnessError> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    log::info!("running `{}` ({:?}, {} trials, seed {})", cfg.id, cfg.kind, cfg.trials, cfg.seed);
    let out = run_experiment(&cfg, exec)?;
    let path = cli
        .out
        .unwrap_or_else(|| cli.out_dir.join(format!("{}.{}", cfg.id, cli.format.extension())));
    emit(&out.rows, cli.format, &path)?;
    if cli.emit_raw {
        emit_raw(&out.raw, &path.with_extension("raw.csv"))?;
    }
    Ok(path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("simulate: {e}");
            ExitCode::FAILURE
        }
    }
}
