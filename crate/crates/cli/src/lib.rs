//! The `stance` command line: validate, estimate, run and report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid usage or config,
//! 3 budget exceeded, 4 partial completion.

pub mod progress;
pub mod tables;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stance_core::analysis::load_benchmark;
use stance_core::dispatch::{
    estimate_remaining, execute_run, resume_run, ExecOptions, RunManifest, RunStatus, Study,
};
use stance_core::gateway::{MockGateway, PriceSheet};
use stance_core::persona::load_personas;
use stance_core::scale::load_scale_bundle;
use stance_core::storage::manifest::{load_manifest, persist_manifest};
use stance_core::storage::responses::{read_responses, rows_from_manifest, write_responses, ExportFormat};
use stance_core::storage::summary::{build_summary, summary_to_string, to_fixed_json, write_summary};
use stance_core::Error;

pub use stance_core::gateway::{DefaultGateways, GatewayFactory};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Invalid,
    BudgetExceeded,
    Partial,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Invalid => 2,
            ExitStatus::BudgetExceeded => 3,
            ExitStatus::Partial => 4,
        }
    }

    pub fn for_run(status: RunStatus) -> Self {
        match status {
            RunStatus::Completed => ExitStatus::Success,
            RunStatus::Partial => ExitStatus::Partial,
            RunStatus::BudgetExceeded => ExitStatus::BudgetExceeded,
            RunStatus::AllProvidersUnreachable | RunStatus::Interrupted => ExitStatus::Failure,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stance", version, about = "Administer survey scales to language models under personas")]
pub struct Cli {
    /// Root directory; every relative path resolves against it.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check run configs, scale bundles, persona bundles, price sheets and mock policies.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Print low/high cost bounds for a run config. Never contacts a provider.
    Estimate {
        config: PathBuf,
        /// Price sheet to use instead of the config's.
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Execute or resume a run.
    Run(RunArgs),
    /// Recompute every analysis output from a responses export.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Csv,
    Jsonl,
}

impl From<ExportKind> for ExportFormat {
    fn from(k: ExportKind) -> Self {
        match k {
            ExportKind::Csv => ExportFormat::Csv,
            ExportKind::Jsonl => ExportFormat::JsonLines,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Continue from the manifest in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Answer every job with the offline mock gateway.
    #[arg(long)]
    pub mock: bool,
    /// Output directory; defaults to out/<run_id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExportKind::Csv)]
    pub export_format: ExportKind,
    /// Stop abruptly after this many jobs finish, keeping only the last checkpoint.
    #[arg(long, hide = true)]
    pub abort_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Responses export (CSV, or JSON-lines for .jsonl).
    pub export: PathBuf,
    /// Human benchmark file to compare against.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Persona the deltas are taken against; defaults to the first in the export.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Where to write the summary; defaults to report.json next to the export.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

const CREDENTIAL_WORDS: [&str; 6] = ["key", "token", "secret", "password", "credential", "auth"];

/// Reject any flag that looks like it carries a credential.
pub fn refuse_credential_flags<S: AsRef<str>>(args: &[S]) -> Result<(), String> {
    for a in args {
        let Some(name) = a.as_ref().strip_prefix("--") else {
            continue;
        };
        let name = name.split('=').next().unwrap_or_default().to_ascii_lowercase();
        if CREDENTIAL_WORDS.iter().any(|w| name.contains(w)) {
            return Err(format!(
                "`--{name}` is not accepted: credentials are read only from the environment variable named by each model's auth_env_var"
            ));
        }
    }
    Ok(())
}

struct Failure {
    status: ExitStatus,
    message: String,
}

fn describe(e: &Error) -> String {
    match e {
        Error::Invalid(vs) => {
            let mut s = format!("{} violation(s)", vs.len());
            for v in vs {
                s.push_str(&format!("\n  {v}"));
            }
            s
        }
        other => other.to_string(),
    }
}

fn invalid(e: Error) -> Failure {
    Failure {
        status: ExitStatus::Invalid,
        message: describe(&e),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        status: ExitStatus::Failure,
        message: e.to_string(),
    }
}

/// Run one parsed command. Primary output goes to `out`, diagnostics to stderr.
pub async fn execute(cli: Cli, factory: &dyn GatewayFactory, out: &mut dyn Write) -> ExitStatus {
    let workdir = cli.workdir;
    let result = match cli.command {
        Command::Validate { paths } => Ok(validate(&workdir, &paths, out)),
        Command::Estimate { config, prices, format } => estimate(&workdir, &config, prices.as_deref(), format, out),
        Command::Run(args) => run(&workdir, args, factory, out).await,
        Command::Report(args) => report(&workdir, args, out),
    };
    match result {
        Ok(status) => status,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.status
        }
    }
}

enum FileKind {
    Run,
    Scales,
    Personas,
    Prices,
    MockPolicy,
}

fn classify(v: &serde_yaml::Value) -> Option<FileKind> {
    let has = |k: &str| v.get(k).is_some();
    if has("run_id") {
        Some(FileKind::Run)
    } else if has("scales") {
        Some(FileKind::Scales)
    } else if has("personas") {
        Some(FileKind::Personas)
    } else if has("prices") {
        Some(FileKind::Prices)
    } else if has("default") {
        Some(FileKind::MockPolicy)
    } else {
        None
    }
}

fn check_file(workdir: &Path, path: &Path) -> Result<String, Error> {
    let full = workdir.join(path);
    let text = std::fs::read_to_string(&full).map_err(|source| Error::Io {
        path: full.clone(),
        source,
    })?;
    let value: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| Error::Syntax {
        path: full.clone(),
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    if value.is_null() {
        return Err(Error::Schema(format!("{} is empty", full.display())));
    }
    match classify(&value) {
        Some(FileKind::Run) => {
            let study = Study::load(workdir, path)?;
            let manifest = study.plan()?;
            Ok(format!("run `{}`, {} jobs", study.config.run_id, manifest.jobs.len()))
        }
        Some(FileKind::Scales) => Ok(format!("{} scale(s)", load_scale_bundle(&full)?.len())),
        Some(FileKind::Personas) => Ok(format!("{} persona(s)", load_personas(&full)?.len())),
        Some(FileKind::Prices) => Ok(format!("{} price(s)", PriceSheet::load(&full)?.prices.len())),
        Some(FileKind::MockPolicy) => {
            let g = MockGateway::load(&full)?;
            Ok(format!("mock policy, {} model override(s)", g.per_model.len()))
        }
        None => Err(Error::Schema(format!(
            "{}: not a run config, scale bundle, persona bundle, price sheet or mock policy",
            full.display()
        ))),
    }
}

fn validate(workdir: &Path, paths: &[PathBuf], out: &mut dyn Write) -> ExitStatus {
    let mut clean = true;
    for p in paths {
        let _ = match check_file(workdir, p) {
            Ok(what) => writeln!(out, "ok       {}: {what}", p.display()),
            Err(e) => {
                clean = false;
                writeln!(out, "invalid  {}: {}", p.display(), describe(&e))
            }
        };
    }
    if clean {
        ExitStatus::Success
    } else {
        ExitStatus::Invalid
    }
}

fn estimate(
    workdir: &Path,
    config: &Path,
    prices: Option<&Path>,
    format: Format,
    out: &mut dyn Write,
) -> Result<ExitStatus, Failure> {
    let study = Study::load(workdir, config).map_err(invalid)?;
    let sheet = match prices {
        Some(p) => PriceSheet::load(&workdir.join(p)).map_err(invalid)?,
        None => study.prices.clone(),
    };
    let est = study.estimate_with(&sheet).map_err(invalid)?;
    for m in &est.unknown_price_models {
        eprintln!("warning: no price for {m}; it is left out of the totals");
    }
    match format {
        Format::Json => write!(out, "{}", to_fixed_json(&est).map_err(runtime)?).map_err(runtime)?,
        Format::Table => tables::write_estimate(&est, out).map_err(runtime)?,
    }
    Ok(ExitStatus::Success)
}

/// Refuse to start when even the low estimate of the remaining jobs would
/// overrun the budget.
fn over_budget(manifest: &RunManifest, prices: &PriceSheet) -> Option<(f64, f64)> {
    let cap = manifest.config.budget_cap_usd?;
    let low = manifest.accumulated_cost_usd + estimate_remaining(manifest, prices).total_low_usd;
    (low > cap).then_some((low, cap))
}

async fn run(workdir: &Path, args: RunArgs, factory: &dyn GatewayFactory, out: &mut dyn Write) -> Result<ExitStatus, Failure> {
    let study = Study::load(workdir, &args.config).map_err(invalid)?;
    let out_dir = workdir.join(args.out.unwrap_or_else(|| Path::new("out").join(&study.config.run_id)));
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let benchmark = match &study.config.sources.benchmark {
        Some(p) => Some(load_benchmark(&workdir.join(p)).map_err(invalid)?),
        None => None,
    };

    let mut manifest = if args.resume {
        if !manifest_path.exists() {
            return Err(invalid(Error::Manifest(format!(
                "nothing to resume: {} does not exist",
                manifest_path.display()
            ))));
        }
        load_manifest(&manifest_path).map_err(invalid)?
    } else {
        if manifest_path.exists() {
            return Err(invalid(Error::Manifest(format!(
                "{} already exists; pass --resume to continue that run or choose another --out",
                manifest_path.display()
            ))));
        }
        study.plan().map_err(invalid)?
    };
    if args.resume && study.config.plan_digest() != manifest.config_digest {
        return Err(invalid(Error::Manifest(format!(
            "config for run `{}` differs from the one the manifest was planned with",
            study.config.run_id
        ))));
    }
    manifest.config.budget_cap_usd = study.config.budget_cap_usd;
    if let Some((low, cap)) = over_budget(&manifest, &study.prices) {
        eprintln!("error: the low cost estimate ${low:.4} exceeds budget_cap_usd ${cap:.4}; not starting");
        return Ok(ExitStatus::BudgetExceeded);
    }

    let gateway = factory.build(&study, workdir, args.mock).map_err(invalid)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    if !args.resume {
        persist_manifest(&manifest, &manifest_path).map_err(runtime)?;
    }
    let opts = ExecOptions {
        prices: study.prices.clone(),
        checkpoint_path: Some(manifest_path.clone()),
        observer: Some(Arc::new(progress::ProgressReporter::stderr())),
        abort_after: args.abort_after,
        ..ExecOptions::default()
    };
    let report = if args.resume {
        resume_run(manifest, Some(&study.config), gateway, opts).await
    } else {
        execute_run(manifest, gateway, opts).await
    }
    .map_err(runtime)?;

    let m = &report.manifest;
    if report.status == RunStatus::Interrupted {
        eprintln!(
            "run interrupted after {} of {} jobs; continue with --resume (checkpoint: {})",
            m.completed(),
            m.jobs.len(),
            manifest_path.display()
        );
        return Ok(ExitStatus::Failure);
    }

    let rows = rows_from_manifest(m);
    let format: ExportFormat = args.export_format.into();
    let responses_path = out_dir.join(format.file_name());
    write_responses(&rows, &responses_path, format).map_err(runtime)?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    match build_summary(&rows, None, benchmark.as_deref()) {
        Ok(doc) => write_summary(&doc, &summary_path).map_err(runtime)?,
        Err(e) => eprintln!("warning: no summary written: {e}"),
    }

    let _ = writeln!(
        out,
        "{}: {}/{} jobs succeeded, {} failed, cost ${:.4}",
        report.status.as_str(),
        m.count(stance_core::dispatch::JobStatus::Succeeded),
        m.jobs.len(),
        m.failures(),
        m.accumulated_cost_usd
    );
    let _ = writeln!(out, "manifest   {}", manifest_path.display());
    let _ = writeln!(out, "responses  {}", responses_path.display());
    let _ = writeln!(out, "summary    {}", summary_path.display());
    Ok(ExitStatus::for_run(report.status))
}

fn report(workdir: &Path, args: ReportArgs, out: &mut dyn Write) -> Result<ExitStatus, Failure> {
    let export = workdir.join(&args.export);
    let rows = read_responses(&export).map_err(invalid)?;
    if rows.is_empty() {
        return Err(invalid(Error::Schema(format!("{} has no rows", export.display()))));
    }
    let benchmark = match &args.benchmark {
        Some(p) => Some(load_benchmark(&workdir.join(p)).map_err(invalid)?),
        None => None,
    };
    let doc = build_summary(&rows, args.baseline.as_deref(), benchmark.as_deref()).map_err(invalid)?;
    let dest = match &args.out {
        Some(p) => workdir.join(p),
        None => export.with_file_name(REPORT_FILE),
    };
    write_summary(&doc, &dest).map_err(runtime)?;
    match args.format {
        Format::Json => write!(out, "{}", summary_to_string(&doc).map_err(runtime)?).map_err(runtime)?,
        Format::Table => tables::write_summary_tables(&doc, out).map_err(runtime)?,
    }
    Ok(ExitStatus::Success)
}
