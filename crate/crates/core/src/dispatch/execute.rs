//! Concurrent execution of a planned run.
//!
//! One feeder task per provider admits jobs in plan order under that
//! provider's concurrency semaphore; every attempt additionally waits on the
//! provider's [`RateLimiter`]. Completions flow over a channel to a single
//! writer that owns the manifest, so record order never affects totals:
//! cost totals are recomputed in job order when the run ends.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::{outcome_from_response, JobKey, JobRecord, JobStatus, RateLimiter, RetryPolicy, RunConfig, RunManifest};
use crate::error::{Error, Result};
use crate::gateway::mock::hash64;
use crate::gateway::{record_cost, Gateway, ModelSpec, PriceSheet, Probe, ProviderStatus, RawResponse};
use crate::persona::PromptText;
use crate::scale::{ResponseScale, ScaleItem};
use crate::storage::manifest::persist_manifest;

/// Consecutive exhausted jobs after which a provider counts as unreachable.
pub const UNREACHABLE_AFTER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Every job is terminal but some failed.
    Partial,
    BudgetExceeded,
    AllProvidersUnreachable,
    Interrupted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Partial => "partial",
            RunStatus::BudgetExceeded => "budget_exceeded",
            RunStatus::AllProvidersUnreachable => "all_providers_unreachable",
            RunStatus::Interrupted => "interrupted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
    pub cost_so_far_usd: f64,
    pub failures: usize,
}

#[derive(Debug)]
pub enum RunEvent<'a> {
    Started {
        progress: Progress,
    },
    JobFinished {
        index: usize,
        record: &'a JobRecord,
        progress: Progress,
    },
    Finished {
        status: RunStatus,
        progress: Progress,
    },
}

pub trait RunObserver: Send + Sync {
    fn on_event(&self, event: &RunEvent<'_>);
}

/// One attempt handed to a provider.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub job_index: usize,
    pub attempt: u32,
    pub provider_id: String,
    pub at: Instant,
}

#[derive(Clone)]
pub struct ExecOptions {
    pub prices: PriceSheet,
    /// Where checkpoints go; `None` keeps the run in memory.
    pub checkpoint_path: Option<PathBuf>,
    /// Overrides the config's `checkpoint_every`.
    pub checkpoint_every: Option<usize>,
    pub observer: Option<Arc<dyn RunObserver>>,
    /// Fault injection: stop abruptly after this many jobs complete in this
    /// execution. Nothing beyond the last periodic checkpoint is persisted.
    pub abort_after: Option<usize>,
    pub unreachable_after: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            prices: PriceSheet::default(),
            checkpoint_path: None,
            checkpoint_every: None,
            observer: None,
            abort_after: None,
            unreachable_after: UNREACHABLE_AFTER,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub status: RunStatus,
    pub dispatches: Vec<Dispatch>,
    /// Jobs handed to a worker during this execution.
    pub jobs_dispatched: usize,
}

/// Exponential backoff with deterministic jitter in [0.5, 1.5) of the nominal
/// delay. `attempt` is the 1-based attempt that just failed.
pub fn backoff_delay(policy: &RetryPolicy, seed: u64, job: &JobKey, attempt: u32) -> Duration {
    let exp = attempt.saturating_sub(1).min(30);
    let nominal = policy
        .base_backoff_ms
        .saturating_mul(1u64 << exp)
        .min(policy.max_backoff_ms);
    let h = hash64(&[&seed.to_string(), &job.to_string(), &attempt.to_string()]);
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    Duration::from_secs_f64(nominal as f64 / 1000.0 * (0.5 + unit))
}

struct JobSpec {
    key: JobKey,
    prompt: PromptText,
    item: ScaleItem,
    scale: ResponseScale,
    model: ModelSpec,
    reserve_usd: f64,
}

struct Budget {
    cap: Option<f64>,
    spent: f64,
    reserved: f64,
    exceeded: bool,
}

struct Shared {
    gateway: Arc<dyn Gateway>,
    specs: HashMap<usize, JobSpec>,
    limiters: HashMap<String, RateLimiter>,
    retry: RetryPolicy,
    seed: u64,
    timeout: Duration,
    stop: AtomicBool,
    budget: Mutex<Budget>,
    dispatches: Mutex<Vec<Dispatch>>,
    spawned: Mutex<Vec<JoinHandle<()>>>,
}

struct Completion {
    index: usize,
    response: RawResponse,
}

async fn run_job(shared: Arc<Shared>, index: usize, tx: mpsc::UnboundedSender<Completion>) {
    let spec = &shared.specs[&index];
    let probe = Probe {
        job: &spec.key,
        prompt: &spec.prompt,
        item: &spec.item,
        scale: &spec.scale,
        run_seed: shared.seed,
    };
    let limiter = &shared.limiters[&spec.model.provider_id];
    let mut attempt = 0;
    let response = loop {
        attempt += 1;
        let at = limiter.acquire().await;
        shared.dispatches.lock().unwrap().push(Dispatch {
            job_index: index,
            attempt,
            provider_id: spec.model.provider_id.clone(),
            at,
        });
        let mut r = shared.gateway.send_probe(&spec.model, &probe, shared.timeout).await;
        r.attempt_count = attempt;
        if r.provider_status == ProviderStatus::RetryableError && attempt < shared.retry.max_attempts {
            tokio::time::sleep(backoff_delay(&shared.retry, shared.seed, &spec.key, attempt)).await;
            continue;
        }
        break r;
    };
    let _ = tx.send(Completion { index, response });
}

async fn feed(
    shared: Arc<Shared>,
    indices: Vec<usize>,
    concurrency: usize,
    tx: mpsc::UnboundedSender<Completion>,
) -> usize {
    let sem = Arc::new(Semaphore::new(concurrency));
    let mut admitted = 0;
    for index in indices {
        let permit = sem.clone().acquire_owned().await.expect("semaphore closed");
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let reserve = shared.specs[&index].reserve_usd;
        {
            let mut b = shared.budget.lock().unwrap();
            if let Some(cap) = b.cap {
                if b.spent + b.reserved + reserve > cap {
                    b.exceeded = true;
                    shared.stop.store(true, Ordering::SeqCst);
                    break;
                }
            }
            b.reserved += reserve;
        }
        admitted += 1;
        let worker = shared.clone();
        let tx = tx.clone();
        let handle = tokio::spawn(async move {
            run_job(worker, index, tx).await;
            drop(permit);
        });
        shared.spawned.lock().unwrap().push(handle);
    }
    admitted
}

fn progress(m: &RunManifest, cost: f64) -> Progress {
    Progress {
        completed: m.completed(),
        total: m.jobs.len(),
        cost_so_far_usd: cost,
        failures: m.failures(),
    }
}

fn checkpoint(m: &mut RunManifest, path: Option<&PathBuf>) -> Result<()> {
    m.recompute_costs();
    m.updated_utc = Utc::now();
    match path {
        Some(p) => persist_manifest(m, p),
        None => Ok(()),
    }
}

/// Execute every pending job of `manifest`. Terminal jobs are left untouched.
pub async fn execute_run(mut manifest: RunManifest, gateway: Arc<dyn Gateway>, opts: ExecOptions) -> Result<RunReport> {
    let cfg = manifest.config.clone();
    let every = opts.checkpoint_every.unwrap_or(cfg.checkpoint_every).max(1);
    let mut specs = HashMap::new();
    let mut by_provider: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, j) in manifest.jobs.iter().enumerate() {
        if j.status != JobStatus::Pending {
            continue;
        }
        let scale = manifest
            .scale(&j.key.scale_id)
            .ok_or_else(|| Error::Manifest(format!("job {} names an unknown scale", j.key)))?;
        let item = scale
            .item(&j.key.item_id)
            .ok_or_else(|| Error::Manifest(format!("job {} names an unknown item", j.key)))?;
        let model = manifest
            .model(&j.key.provider_id, &j.key.model_name)
            .ok_or_else(|| Error::Manifest(format!("job {} names an unknown model", j.key)))?;
        let reserve_usd = opts
            .prices
            .lookup(&model.provider_id, &model.model_name)
            .map(|p| {
                let input = super::estimate::input_tokens_for(j.prompt.char_length) as f64;
                PriceSheet::cost_of(p, input, model.max_output_tokens as f64)
            })
            .unwrap_or(0.0);
        specs.insert(
            i,
            JobSpec {
                key: j.key.clone(),
                prompt: j.prompt.clone(),
                item: item.clone(),
                scale: scale.response_scale.clone(),
                model: model.clone(),
                reserve_usd,
            },
        );
        by_provider.entry(j.key.provider_id.clone()).or_default().push(i);
    }

    manifest.recompute_costs();
    let limiters = by_provider
        .keys()
        .map(|p| (p.clone(), RateLimiter::new(cfg.limits.for_provider(p).rate_per_sec)))
        .collect();
    let shared = Arc::new(Shared {
        gateway,
        specs,
        limiters,
        retry: cfg.retry,
        seed: cfg.seed,
        timeout: Duration::from_millis(cfg.timeout_ms),
        stop: AtomicBool::new(false),
        budget: Mutex::new(Budget {
            cap: cfg.budget_cap_usd,
            spent: manifest.accumulated_cost_usd,
            reserved: 0.0,
            exceeded: false,
        }),
        dispatches: Mutex::new(Vec::new()),
        spawned: Mutex::new(Vec::new()),
    });

    let emit = |e: RunEvent<'_>| {
        if let Some(o) = &opts.observer {
            o.on_event(&e);
        }
    };
    emit(RunEvent::Started {
        progress: progress(&manifest, manifest.accumulated_cost_usd),
    });

    let (tx, mut rx) = mpsc::unbounded_channel();
    let providers: Vec<String> = by_provider.keys().cloned().collect();
    let mut feeders = Vec::new();
    for (provider, indices) in by_provider {
        let concurrency = cfg.limits.for_provider(&provider).concurrency.max(1) as usize;
        feeders.push(tokio::spawn(feed(shared.clone(), indices, concurrency, tx.clone())));
    }
    drop(tx);

    let mut exhausted_streak: HashMap<String, usize> = providers.iter().map(|p| (p.clone(), 0)).collect();
    let mut finished_here = 0usize;
    let mut since_checkpoint = 0usize;
    let mut interrupted = false;
    let mut unreachable = false;

    while let Some(Completion { index, response }) = rx.recv().await {
        let spec = &shared.specs[&index];
        let cost = record_cost(&response, &spec.model, &opts.prices);
        let running_cost = {
            let mut b = shared.budget.lock().unwrap();
            b.spent += cost.unwrap_or(0.0);
            b.reserved = (b.reserved - spec.reserve_usd).max(0.0);
            b.spent
        };
        let scale = manifest.scale(&spec.key.scale_id).expect("scale checked at plan time");
        let (status, mut outcome) = outcome_from_response(response, &spec.item, scale, cost);
        if !cfg.store_raw_text {
            outcome.raw_text = format!("sha256:{}", outcome.text_sha256);
            outcome.justification.clear();
        }
        let streak = exhausted_streak.get_mut(&spec.key.provider_id).unwrap();
        match status {
            JobStatus::FailedExhausted => *streak += 1,
            JobStatus::Succeeded => *streak = 0,
            _ => {}
        }
        let record = &mut manifest.jobs[index];
        record.status = status;
        record.outcome = Some(outcome);
        finished_here += 1;
        since_checkpoint += 1;

        if opts.observer.is_some() {
            let p = progress(&manifest, running_cost);
            emit(RunEvent::JobFinished {
                index,
                record: &manifest.jobs[index],
                progress: p,
            });
        }
        if since_checkpoint >= every {
            checkpoint(&mut manifest, opts.checkpoint_path.as_ref())?;
            since_checkpoint = 0;
        }
        if opts.abort_after.is_some_and(|n| finished_here >= n) {
            interrupted = true;
            break;
        }
        if !unreachable && exhausted_streak.values().all(|&s| s >= opts.unreachable_after) {
            unreachable = true;
            shared.stop.store(true, Ordering::SeqCst);
        }
    }

    let mut jobs_dispatched = 0;
    if interrupted {
        shared.stop.store(true, Ordering::SeqCst);
        for f in &feeders {
            f.abort();
        }
        for h in shared.spawned.lock().unwrap().iter() {
            h.abort();
        }
    }
    for f in feeders {
        if let Ok(n) = f.await {
            jobs_dispatched += n;
        }
    }
    let dispatches = std::mem::take(&mut *shared.dispatches.lock().unwrap());
    if interrupted {
        jobs_dispatched = jobs_dispatched.max(shared.spawned.lock().unwrap().len());
        manifest.recompute_costs();
        let status = RunStatus::Interrupted;
        emit(RunEvent::Finished {
            status,
            progress: progress(&manifest, manifest.accumulated_cost_usd),
        });
        return Ok(RunReport {
            manifest,
            status,
            dispatches,
            jobs_dispatched,
        });
    }

    checkpoint(&mut manifest, opts.checkpoint_path.as_ref())?;
    let budget_exceeded = shared.budget.lock().unwrap().exceeded;
    let status = if manifest.count(JobStatus::Succeeded) == manifest.jobs.len() {
        RunStatus::Completed
    } else if budget_exceeded {
        RunStatus::BudgetExceeded
    } else if unreachable {
        RunStatus::AllProvidersUnreachable
    } else {
        RunStatus::Partial
    };
    emit(RunEvent::Finished {
        status,
        progress: progress(&manifest, manifest.accumulated_cost_usd),
    });
    Ok(RunReport {
        manifest,
        status,
        dispatches,
        jobs_dispatched,
    })
}

/// Continue a run from its manifest. Failed jobs are retried; succeeded jobs
/// are kept as recorded. When `config` is given its plan digest must match.
pub async fn resume_run(
    mut manifest: RunManifest,
    config: Option<&RunConfig>,
    gateway: Arc<dyn Gateway>,
    opts: ExecOptions,
) -> Result<RunReport> {
    manifest.check()?;
    if let Some(cfg) = config {
        if cfg.plan_digest() != manifest.config_digest {
            return Err(Error::Manifest(format!(
                "config for run `{}` differs from the one the manifest was planned with",
                cfg.run_id
            )));
        }
        // non-plan settings (limits, budget, retry) may change between sessions
        manifest.config = cfg.clone();
    }
    for j in &mut manifest.jobs {
        if matches!(j.status, JobStatus::FailedFatal | JobStatus::FailedExhausted) {
            j.status = JobStatus::Pending;
            j.outcome = None;
        }
    }
    execute_run(manifest, gateway, opts).await
}
