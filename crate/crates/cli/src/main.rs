use std::process::ExitCode;

use clap::Parser;
use stance_cli::{execute, refuse_credential_flags, Cli, DefaultGateways, ExitStatus};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args_os()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    if let Err(msg) = refuse_credential_flags(&args[1..]) {
        eprintln!("error: {msg}");
        return ExitCode::from(ExitStatus::Invalid.code());
    }
    let cli = Cli::parse_from(args);
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start the async runtime: {e}");
            return ExitCode::from(ExitStatus::Failure.code());
        }
    };
    let mut stdout = std::io::stdout().lock();
    let status = runtime.block_on(execute(cli, &DefaultGateways, &mut stdout));
    ExitCode::from(status.code())
}
