//! The `flowline` command line and HTTP service.
//!
//! [`run`] is the whole program; `main` only forwards its exit code.

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

mod commands;
mod error;
pub mod render;
pub mod service;

pub use commands::Cli;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
}
pub use error::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return EXIT_OK;
            }
            // Value errors omit the usage line; every usage error shows it.
            if !e.render().to_string().contains("Usage:") {
                let _ = writeln!(std::io::stderr(), "\n{}", usage_for(&argv));
            }
            return EXIT_USAGE;
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Usage of the deepest subcommand named in `argv`.
fn usage_for(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut current = &mut cmd;
    for arg in argv.iter().skip(1) {
        let name = arg.to_string_lossy();
        if current.find_subcommand(name.as_ref()).is_none() {
            continue;
        }
        current = current.find_subcommand_mut(name.as_ref()).expect("checked above");
    }
    current.render_usage().to_string()
}
