mod args;
mod commands;
mod records;

use std::process::ExitCode;

use clap::Parser;
use structcore::ErrorClass;

use args::{Cli, Command};

/// Exit status for a failed run: 2 protocol violation, 3 format error,
/// 4 undefined metric, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|cause| cause.downcast_ref::<structcore::Error>())
        .map_or(1, |e| match e.class() {
            ErrorClass::Protocol => 2,
            ErrorClass::Format => 3,
            ErrorClass::UndefinedMetric => 4,
            ErrorClass::Io | ErrorClass::Invalid => 1,
        })
}

fn run(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Fit(a) => commands::fit::run(a),
        Command::Score(a) => commands::score::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Ablate(a) => commands::ablate::run(a),
        Command::Bench(a) => commands::bench::run(a),
        Command::Synth(a) => commands::synth::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors must not collide with the protocol exit status
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
