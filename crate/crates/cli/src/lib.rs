//! Command-line front end: parse flags, resolve the run config, dispatch the
//! task and write the manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod mock;
mod tasks;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{Overrides, Resolved};
use crate::error::RunError;

#[derive(Debug, Parser)]
#[command(
    name = "ontolearn",
    version,
    about = "Ontology learning pipelines driven by a JSON run config"
)]
struct Args {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Base URL of an OpenAI-compatible service (e.g. http://localhost:8000/v1).
    #[arg(long, env = "ONTOLEARN_ENDPOINT")]
    endpoint: Option<String>,
    /// Use the in-process deterministic completion and embedding backends.
    #[arg(long)]
    mock_llm: bool,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: Args) -> Result<PathBuf, RunError> {
    let overrides = Overrides {
        seed: args.seed,
        endpoint: args.endpoint,
        mock_llm: args.mock_llm,
        out: args.out,
    };
    let api_key = std::env::var("ONTOLEARN_API_KEY").ok().filter(|k| !k.is_empty());
    let resolved = Resolved::load(&args.config, overrides, api_key)?;
    std::fs::create_dir_all(&resolved.out_dir).map_err(|e| RunError::data_in(&resolved.out_dir, e))?;
    let log = tasks::run(&resolved)?;
    manifest::write_manifest(&resolved, log)
}

/// Parse `args` (program name first), run the task and return the process
/// exit code. Errors are reported on stderr.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(args) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("ontolearn: {e}");
            e.exit_code()
        }
    }
}
