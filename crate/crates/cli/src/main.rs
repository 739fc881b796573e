mod args;
mod commands;
mod fail;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use fail::Failure;

/// Caps rayon's pool at `CCTSNE_THREADS` when set.
fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CCTSNE_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::invalid(format!("CCTSNE_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Other(e.to_string()))?;
    log::debug!("using {threads} worker thread(s)");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Embed(a) => commands::embed(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Synth(a) => commands::synth(a),
        Command::Serve(a) => commands::serve(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
