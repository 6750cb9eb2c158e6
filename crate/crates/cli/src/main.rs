use std::process::ExitCode;

fn main() -> ExitCode {
    let manifest = match bare_cli::parse_config(std::env::args_os()) {
        Ok(m) => m,
        Err(bare_cli::CliError::Clap(e)) => e.exit(),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match bare_cli::execute(&manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
