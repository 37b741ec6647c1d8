mod cli;
mod commands;
mod error;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use crate::cli::Cli;
use crate::error::CliError;

fn fail(e: CliError) -> i32 {
    eprintln!("{}", e.to_json());
    e.failure.exit_code()
}

fn run(argv: Vec<String>) -> i32 {
    let argv = match settings::expand(argv) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => return fail(CliError::usage(e.render().to_string().trim_end())),
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => fail(e),
    }
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
