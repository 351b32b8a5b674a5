use std::path::PathBuf;
use std::process::ExitCode;

use catstab::run::exit;
use catstab::{run, Experiment, ExperimentConfig, RunError, RunOptions};
use clap::Parser;

/// Simulations of a dissipatively stabilized cat-state qubit.
#[derive(Parser, Debug)]
#[command(name = "catstab", version)]
struct Cli {
    /// evolve | steady | wigner | sweep | compare | reduce
    experiment: String,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and Wigner grids.
    #[arg(long)]
    threads: Option<usize>,
    /// Sweep with the full three-mode model instead of the effective mapping.
    #[arg(long)]
    full_model: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::CONFIG as u8
            } else {
                0
            });
        }
    };
    match execute(&cli) {
        Ok(report) => {
            println!("{}", report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<catstab::RunReport, RunError> {
    let Some(experiment) = Experiment::parse(&cli.experiment) else {
        return Err(RunError::Usage(format!(
            "unknown experiment `{}`; expected evolve, steady, wigner, sweep, compare or reduce",
            cli.experiment
        )));
    };
    if cli.threads == Some(0) {
        return Err(RunError::Usage("--threads must be at least 1".into()));
    }
    let cfg = ExperimentConfig::load(&cli.config)?;
    if cfg.experiment != experiment {
        return Err(RunError::Usage(format!(
            "command line asks for `{experiment}` but {} configures `{}`",
            cli.config.display(),
            cfg.experiment
        )));
    }
    run(
        &cfg,
        &RunOptions {
            out_dir: cli.out.clone(),
            threads: cli.threads,
            full_model: cli.full_model,
        },
    )
}
