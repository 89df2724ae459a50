mod args;
mod commands;
mod record;

use std::process::ExitCode;

use clap::Parser;
use diffnet_core::{Error, Result};

use args::{Cli, Command};

/// 2: configuration, 3: numerical failure, 4: input or output.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnsupportedKind(_) | Error::Domain(_) | Error::Dimension(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Parse(_) => 4,
    }
}

fn execute(cli: &Cli) -> Result<()> {
    record::write_run(cli)?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, cli),
        Command::Denoise(a) => commands::denoise(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Inpaint(a) => commands::inpaint(a),
        Command::GenInpaint(a) => commands::gen_inpaint(a),
        Command::StabilityCheck(a) => commands::stability_check(a),
        Command::Rerun(_) => Err(Error::Config("a recorded run cannot itself be a rerun".into())),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cli = match cli.command {
        Command::Rerun(r) => {
            let recorded = record::parse_run(&r.run)?;
            Cli {
                threads: recorded.threads,
                command: recorded.command.with_out(r.out),
            }
        }
        _ => cli,
    };
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start the thread pool: {e}")))?;
    execute(&cli)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
