use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use stance_core::gateway::DefaultGateways;
use stance_service::{app, serve, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "stance-service", version, about = "HTTP API for launching and watching stance runs")]
struct Args {
    /// Root directory; every relative path resolves against it.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Output root; each run writes to <out>/<run_id>.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Scale bundle served by GET /scales. Repeatable.
    #[arg(long = "scales")]
    scales: Vec<PathBuf>,
    /// Persona bundle served by GET /personas.
    #[arg(long = "personas")]
    personas: Option<PathBuf>,
    /// Browser origin allowed to call the API. Repeatable.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
    /// Completions per cell between cell_update events.
    #[arg(long, default_value_t = 10)]
    cell_every: usize,
}

#[tokio::main]
async fn main() -> ExitCode {
    let a = Args::parse();
    let cfg = ServiceConfig {
        workdir: a.workdir,
        out_dir: a.out,
        scale_bundles: a.scales,
        persona_bundle: a.personas,
        cors_origins: a.cors_origins,
        cell_update_every: a.cell_every,
    };
    let router = match app(cfg, Arc::new(DefaultGateways)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&a.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", a.bind);
            return ExitCode::from(1);
        }
    };
    eprintln!("listening on http://{}", a.bind);
    match serve(listener, router).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
