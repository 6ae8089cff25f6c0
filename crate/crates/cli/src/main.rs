//! Command-line front end for the patch-funnel pipeline.
//!
//! Exit codes: 0 on success, 1 for configuration/input problems (including
//! usage errors), 2 when the model backend failed.

mod args;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let successful = matches!(
                error.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            // clap routes help/version to stdout and diagnostics to stderr.
            let _ = error.print();
            return if successful {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    match run::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            let backend_failure = error
                .downcast_ref::<patchfunnel::Error>()
                .is_some_and(patchfunnel::Error::is_backend);
            ExitCode::from(if backend_failure { 2 } else { 1 })
        }
    }
}
