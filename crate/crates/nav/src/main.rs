use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match hmsg_nav::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    hmsg_nav::cli::init_logging(cli.verbose);
    match hmsg_nav::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed the pipe (`| head`); nothing left to report
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
