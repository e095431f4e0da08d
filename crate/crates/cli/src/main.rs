mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pnet::Error>() {
            return match e {
                pnet::Error::Config(_) => EXIT_USAGE,
                pnet::Error::NonFinite { .. } | pnet::Error::Tensor(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("PNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("PNET_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("pnet: error: {}", one_line(&msg));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    // Later occurrences win, so user flags override file and preset values.
    let command = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("pnet: {}", first.trim());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("pnet: error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnet: error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(exit_code(&e))
        }
    }
}
