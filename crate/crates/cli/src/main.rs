mod args;
mod config;
mod run;
mod streak;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, StreakCommand};
use config::{CliError, CliResult};

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match std::env::var("TD_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("TD_THREADS={v:?}: expected a thread count")))?,
        ),
        Err(_) => flag,
    };
    if n == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match &cli.command {
        Command::Calibrate(a) => run::calibrate(a),
        Command::Pd(a) => run::pd(a),
        Command::Table(a) => run::table(a),
        Command::Mismatch(a) => run::mismatch(a),
        Command::ArlBound(a) => run::arl_bound(a),
        Command::Streak(StreakCommand::Synth(a)) => streak::synth(a),
        Command::Streak(StreakCommand::Detect(a)) => streak::detect_cmd(a),
        Command::Streak(StreakCommand::Bench(a)) => streak::bench(a),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
