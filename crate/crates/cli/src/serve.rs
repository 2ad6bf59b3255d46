use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use coa_core::backends::server::serve;
use coa_core::backends::MockBackend;

use crate::{CliError, CliResult, ExitContext, EXIT_CONFIG};

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub fixtures: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8000")]
    pub addr: String,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

/// Serves scripted answers on /chat, /embed, /tag and /ready until killed.
pub fn cmd_serve_mock(args: &ServeArgs) -> CliResult<()> {
    if !args.fixtures.is_file() {
        return Err(CliError::usage(format!("fixture file {} does not exist", args.fixtures.display())));
    }
    let mock = MockBackend::from_fixtures(&args.fixtures).exit_code(EXIT_CONFIG)?;
    let handle = serve(Arc::new(mock), &args.addr, args.workers.max(1)).exit_code(EXIT_CONFIG)?;
    println!("{}", handle.base_url());
    handle.join();
    Ok(())
}
