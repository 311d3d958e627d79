use std::process::ExitCode;

fn main() -> ExitCode {
    match modeseq::cli::run_from(std::env::args_os(), &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.message().is_empty() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message().trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}
