mod run;
mod spec;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use crate::spec::{Cli, ExperimentSpec};

const THREADS_ENV: &str = "PHASEFORGE_THREADS";

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    anyhow::ensure!(n > 0, "{THREADS_ENV} must be a positive integer, got `{value}`");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    let spec = ExperimentSpec::resolve(cli)?;
    let prepared = run::prepare(spec)?;
    run::execute(prepared)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
