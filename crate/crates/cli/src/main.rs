use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use switchdiff_cli::{parse_config, run_scenario, RunError, RunOptions};

/// Run a switching-diffusion scenario described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "switchdiff", version)]
struct Args {
    /// Scenario config (JSON).
    config: PathBuf,
    /// Worker threads for batch runs; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed, overriding `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &Args) -> Result<(), RunError> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| RunError::Io {
        context: args.config.display().to_string(),
        source,
    })?;
    let parsed = parse_config(&text)?;
    let outcome = run_scenario(
        parsed,
        &RunOptions {
            workers: args.workers,
            out_dir: args.out.clone(),
            seed: args.seed,
        },
    )?;
    for f in &outcome.files {
        println!("{}", outcome.out_dir.join(f).display());
    }
    Ok(())
}
