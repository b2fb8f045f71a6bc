use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hjweave_cli::{parse_config, run, Command, RunError};

/// Variational and finite-difference solvers for weakly coupled
/// Hamilton-Jacobi systems.
#[derive(Debug, Parser)]
#[command(name = "hjweave", version)]
struct Cli {
    command: Command,
    /// Problem description (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for grid sweeps.
    #[arg(long, value_name = "N", env = "HJWEAVE_THREADS")]
    threads: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, RunError> {
    let mut config = parse_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    for w in &config.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    run(cli.command, &config, &out)
}
