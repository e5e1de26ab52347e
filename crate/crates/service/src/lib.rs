//! HTTP facade over the run engine: launch runs, stream their progress as
//! server-sent events, and serve results, bundles and cost estimates.
//!
//! Provider credentials come from the service's environment only; payloads
//! that carry credential-like fields are rejected.

pub mod log;
pub mod recorder;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stance_core::analysis::{load_benchmark, BenchmarkRow};
use stance_core::dispatch::{
    estimate_remaining, execute_run, ExecOptions, Progress, RunConfig, RunManifest, Study,
};
use stance_core::gateway::{Gateway, GatewayFactory};
use stance_core::persona::{load_personas, Persona};
use stance_core::scale::{load_scale_bundles, ScaleDefinition, Violation};
use stance_core::storage::responses::{rows_from_manifest, write_responses, ExportFormat};
use stance_core::storage::summary::{build_summary, summary_to_string, to_fixed_json, to_fixed_json_line, CellSummary};
use stance_core::storage::SCHEMA_VERSION;
use stance_core::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use log::{EventKind, RunEntry, RunHandle, RunState};
use recorder::{Recorder, CELL_UPDATE_EVERY};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Root for every relative path, including those inside run configs.
    pub workdir: PathBuf,
    /// Run outputs go to `<out_dir>/<run_id>`.
    pub out_dir: PathBuf,
    pub scale_bundles: Vec<PathBuf>,
    pub persona_bundle: Option<PathBuf>,
    /// Origins allowed to call the API from a browser.
    pub cors_origins: Vec<String>,
    pub cell_update_every: usize,
}

impl ServiceConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            workdir: workdir.into(),
            out_dir: PathBuf::from("out"),
            scale_bundles: Vec::new(),
            persona_bundle: None,
            cors_origins: Vec::new(),
            cell_update_every: CELL_UPDATE_EVERY,
        }
    }
}

#[derive(Serialize)]
struct ScaleBundle<'a> {
    schema_version: u32,
    scales: &'a [ScaleDefinition],
}

#[derive(Serialize)]
struct PersonaBundle<'a> {
    schema_version: u32,
    personas: &'a [Persona],
}

pub struct AppState {
    cfg: ServiceConfig,
    scales_doc: String,
    personas_doc: String,
    runs: Mutex<HashMap<String, Arc<RunEntry>>>,
    factory: Arc<dyn GatewayFactory>,
}

impl AppState {
    pub fn run(&self, run_id: &str) -> Option<Arc<RunEntry>> {
        self.runs.lock().unwrap().get(run_id).cloned()
    }

    fn out_dir(&self, run_id: &str) -> PathBuf {
        self.cfg.workdir.join(&self.cfg.out_dir).join(run_id)
    }
}

/// Error body: `{code, message, violations}`.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    code: &'static str,
    message: String,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn from_core(e: Error) -> Self {
        let code = match &e {
            Error::Invalid(_) => "invalid_config",
            Error::MissingCredential(_) => "missing_credential",
            Error::Io { .. } | Error::Syntax { .. } => "unreadable_source",
            _ => "bad_request",
        };
        let violations = e.violations().to_vec();
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code,
            message: e.to_string(),
            violations,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self)
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match to_fixed_json(value) {
        Ok(body) => raw_json(status, body),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn raw_json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

const CREDENTIAL_WORDS: [&str; 7] = ["key", "token", "secret", "password", "credential", "authorization", "bearer"];

/// Object keys that look like they carry a credential. Naming the
/// environment variable (`auth_env_var`) is allowed.
pub fn credential_fields(v: &Value) -> Vec<String> {
    let mut found = Vec::new();
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let lower = k.to_ascii_lowercase();
                    if lower != "auth_env_var" && CREDENTIAL_WORDS.iter().any(|w| lower.contains(w)) {
                        found.push(k.clone());
                    }
                    stack.push(child);
                }
            }
            Value::Array(items) => stack.extend(items),
            _ => {}
        }
    }
    found.sort();
    found
}

fn parse_payload<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("malformed JSON: {e}")))?;
    let creds = credential_fields(&value);
    if !creds.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "credentials_not_accepted",
            format!(
                "payload field(s) {} look like credentials; keys are read from the service environment",
                creds.join(", ")
            ),
        ));
    }
    serde_json::from_value(value).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    pub config: RunConfig,
    #[serde(default)]
    pub mock: bool,
}

/// Build the router. Scale and persona bundles are loaded once, here.
pub fn app(cfg: ServiceConfig, factory: Arc<dyn GatewayFactory>) -> stance_core::Result<Router> {
    let bundles: Vec<PathBuf> = cfg.scale_bundles.iter().map(|p| cfg.workdir.join(p)).collect();
    let scales = load_scale_bundles(&bundles)?;
    let personas = match &cfg.persona_bundle {
        Some(p) => load_personas(&cfg.workdir.join(p))?,
        None => Vec::new(),
    };
    let scales_doc = to_fixed_json(&ScaleBundle {
        schema_version: SCHEMA_VERSION,
        scales: &scales,
    })?;
    let personas_doc = to_fixed_json(&PersonaBundle {
        schema_version: SCHEMA_VERSION,
        personas: &personas,
    })?;
    let cors = cors_layer(&cfg.cors_origins);
    let state = Arc::new(AppState {
        cfg,
        scales_doc,
        personas_doc,
        runs: Mutex::new(HashMap::new()),
        factory,
    });
    let router = Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(stream_events))
        .route("/runs/{id}/results", get(get_results))
        .route("/scales", get(list_scales))
        .route("/personas", get(list_personas))
        .route("/estimate", post(estimate))
        .with_state(state);
    Ok(match cors {
        Some(layer) => router.layer(layer),
        None => router,
    })
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    if list.is_empty() {
        return None;
    }
    Some(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(list))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, HeaderName::from_static("last-event-id")]),
    )
}

struct Launch {
    study: Study,
    manifest: RunManifest,
    gateway: Arc<dyn Gateway>,
    benchmark: Option<Vec<BenchmarkRow>>,
    out_dir: PathBuf,
    every: usize,
}

async fn create_run(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRun = parse_payload(&body)?;
    let run_id = req.config.run_id.clone();
    let workdir = app.cfg.workdir.clone();
    let study = Study::from_config(&workdir, req.config).map_err(ApiError::from_core)?;
    let manifest = study.plan().map_err(ApiError::from_core)?;
    if let Some(cap) = study.config.budget_cap_usd {
        let low = estimate_remaining(&manifest, &study.prices).total_low_usd;
        if low > cap {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "over_budget",
                format!("the low cost estimate ${low:.4} exceeds budget_cap_usd ${cap:.4}"),
            ));
        }
    }
    let benchmark = match &study.config.sources.benchmark {
        Some(p) => Some(load_benchmark(&workdir.join(p)).map_err(ApiError::from_core)?),
        None => None,
    };
    let gateway = app
        .factory
        .build(&study, &workdir, req.mock)
        .map_err(ApiError::from_core)?;
    let out_dir = app.out_dir(&run_id);

    let entry = {
        let mut runs = app.runs.lock().unwrap();
        if runs.contains_key(&run_id) || out_dir.join("manifest.json").exists() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "run_exists",
                format!("run `{run_id}` already exists"),
            ));
        }
        let entry = RunEntry::new(&run_id, manifest.jobs.len(), req.mock);
        runs.insert(run_id, entry.clone());
        entry
    };
    let handle = entry.handle();
    let launch = Launch {
        study,
        manifest,
        gateway,
        benchmark,
        out_dir,
        every: app.cfg.cell_update_every,
    };
    tokio::spawn(drive(entry, launch));
    Ok(json_response(StatusCode::CREATED, &handle))
}

fn progress_of(m: &RunManifest) -> Progress {
    Progress {
        completed: m.completed(),
        total: m.jobs.len(),
        cost_so_far_usd: m.accumulated_cost_usd,
        failures: m.failures(),
    }
}

async fn drive(entry: Arc<RunEntry>, launch: Launch) {
    let recorder = Arc::new(Recorder::new(entry.clone(), launch.every));
    if let Err(e) = std::fs::create_dir_all(&launch.out_dir) {
        entry.set_error(format!("cannot create {}: {e}", launch.out_dir.display()));
        entry.update(RunState::Failed, None);
        close(&entry, &[]);
        return;
    }
    let opts = ExecOptions {
        prices: launch.study.prices.clone(),
        checkpoint_path: Some(launch.out_dir.join("manifest.json")),
        observer: Some(recorder),
        ..ExecOptions::default()
    };
    let report = match execute_run(launch.manifest, launch.gateway, opts).await {
        Ok(r) => r,
        Err(e) => {
            entry.set_error(e.to_string());
            entry.update(RunState::Failed, None);
            close(&entry, &[]);
            return;
        }
    };
    let rows = rows_from_manifest(&report.manifest);
    if let Err(e) = write_responses(&rows, &launch.out_dir.join("responses.csv"), ExportFormat::Csv) {
        entry.set_error(e.to_string());
    }
    let mut cells = Vec::new();
    match build_summary(&rows, None, launch.benchmark.as_deref()).and_then(|doc| Ok((summary_to_string(&doc)?, doc))) {
        Ok((text, doc)) => {
            if let Err(e) = std::fs::write(launch.out_dir.join("summary.json"), &text) {
                entry.set_error(format!("cannot write summary: {e}"));
            }
            entry.set_summary(text);
            cells = doc.item_cells;
        }
        Err(e) => entry.set_error(e.to_string()),
    }
    entry.update(RunState::from_status(report.status), Some(progress_of(&report.manifest)));
    close(&entry, &cells);
}

fn line<T: Serialize>(v: &T) -> String {
    to_fixed_json_line(v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

/// Append the closing snapshot (final progress and every cell) and the
/// terminal event.
fn close(entry: &RunEntry, cells: &[CellSummary]) {
    entry.begin_snapshot();
    let handle = entry.handle();
    entry.append(EventKind::Progress, line(&handle));
    for c in cells {
        entry.append(EventKind::CellUpdate, line(c));
    }
    entry.append(EventKind::Terminal, line(&handle));
}

async fn get_run(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let entry = app.run(&id).ok_or_else(|| ApiError::not_found(&format!("run `{id}`")))?;
    Ok(json_response(StatusCode::OK, &entry.handle()))
}

fn sse_stream(entry: &Arc<RunEntry>, last: Option<u64>) -> impl Stream<Item = Result<Event, Infallible>> {
    entry.subscribe(last).map(|e| {
        Ok(Event::default()
            .id(e.id.to_string())
            .event(e.kind.as_str())
            .data(e.data))
    })
}

async fn stream_events(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let entry = app.run(&id).ok_or_else(|| ApiError::not_found(&format!("run `{id}`")))?;
    let last = match headers.get("last-event-id") {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "Last-Event-ID must be an integer"))?,
        ),
        None => None,
    };
    Ok(Sse::new(sse_stream(&entry, last)).keep_alive(KeepAlive::default()))
}

async fn get_results(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let entry = app.run(&id).ok_or_else(|| ApiError::not_found(&format!("run `{id}`")))?;
    let handle: RunHandle = entry.handle();
    if !handle.state.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_ready",
            format!("run `{id}` is still {}", if handle.state == RunState::Planning { "planning" } else { "running" }),
        ));
    }
    match entry.summary() {
        Some(s) => Ok(raw_json(StatusCode::OK, s)),
        None => Err(ApiError::not_found(&format!("results for run `{id}`"))),
    }
}

async fn list_scales(State(app): State<Arc<AppState>>) -> Response {
    raw_json(StatusCode::OK, app.scales_doc.clone())
}

async fn list_personas(State(app): State<Arc<AppState>>) -> Response {
    raw_json(StatusCode::OK, app.personas_doc.clone())
}

async fn estimate(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let config: RunConfig = parse_payload(&body)?;
    let study = Study::from_config(&app.cfg.workdir, config).map_err(ApiError::from_core)?;
    let est = study.estimate().map_err(ApiError::from_core)?;
    Ok(json_response(StatusCode::OK, &est))
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
