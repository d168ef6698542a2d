mod bench;
mod gen;
mod input;
mod run;
mod solve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use entropy_bounds::error::Error as CoreError;

#[derive(Parser)]
#[command(name = "entropy-bounds", version, about = "Certified upper bounds for D-optimality and maximum-entropy sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance: matrix file plus JSON manifest.
    #[command(subcommand)]
    Gen(gen::GenCommand),
    /// Solve one relaxation and print the bound report as JSON.
    Solve(solve::SolveCommand),
    /// Run many solves and collect one CSV row per run.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
}

/// Bad input that should exit with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_LIMIT: u8 = 3;

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<CoreError>() {
        Some(
            CoreError::InvalidArgument(_)
            | CoreError::Dimension(_)
            | CoreError::Parse { .. }
            | CoreError::RankDeficient { .. }
            | CoreError::ComplementRequiresFullRank { .. }
            | CoreError::NonFinite { .. },
        ) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Print a line to stdout; a closed pipe is not an error.
pub fn print_stdout(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Worker cap from `ENTROPY_BOUNDS_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("ENTROPY_BOUNDS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    if let Some(t) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.command {
        Command::Gen(cmd) => gen::run(cmd).map(|()| EXIT_OK),
        Command::Solve(cmd) => solve::run(cmd),
        Command::Bench(cmd) => bench::run(cmd).map(|()| EXIT_OK),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
