//! Command-line front end: CSV/JSON ingestion, command dispatch and JSON
//! reports. Every randomized command takes an explicit `--seed`.

pub mod error;
pub mod io;
pub mod report;

mod commands;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::Cli;
pub use error::{CliError, CliResult};

/// Parses `argv` (including the program name), runs the command and writes
/// the report to `out`. Returns the process exit code: 0 on success, 2 on
/// usage errors, 1 on data or convergence errors.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = match std::env::var("CRM_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                let _ = writeln!(err, "error: CRM_THREADS must be a positive integer, got '{v}'");
                return 2;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::execute(&cli)) {
        Ok(text) => match out.write_all(text.as_bytes()) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(err, "error: {}", CliError::Output(e));
                1
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
