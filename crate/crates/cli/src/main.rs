use std::process::ExitCode;

use clap::Parser;
use funfx_cli::args::Cli;
use funfx_cli::output::display;
use funfx_cli::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Config(e.to_string().trim().to_string())),
    };
    let config = match cli.resolve() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if cli.print_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    match funfx_cli::run(&config) {
        Ok(files) => {
            println!("{}", display(&files));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}
