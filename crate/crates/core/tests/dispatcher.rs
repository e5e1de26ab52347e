mod support;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use stance_core::dispatch::{
    backoff_delay, execute_run, plan_run, resume_run, ExecOptions, JobKey, JobStatus, ProviderLimits, RetryPolicy,
    RunEvent, RunObserver, RunStatus,
};
use stance_core::gateway::{
    classify_http_status, Gateway, MockGateway, MockPolicy, ModelSpec, PriceEntry, PriceSheet, Probe, ProviderStatus,
    RawResponse,
};
use stance_core::storage::manifest::load_manifest;
use stance_core::storage::responses::{rows_from_manifest, ResponsesRow};
use support::fixtures::{mock_model, model_on, small_config, study, workdir};

fn neutral_gateway(persona_ids: &[&str]) -> MockGateway {
    MockGateway::new(MockPolicy::neutral(persona_ids))
}

/// Replays a per-item list of HTTP codes, then falls through to the mock.
struct Scripted {
    inner: MockGateway,
    script: HashMap<String, Vec<u16>>,
    calls: Mutex<HashMap<String, usize>>,
}

#[async_trait]
impl Gateway for Scripted {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, timeout: Duration) -> RawResponse {
        let n = {
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(probe.job.to_string()).or_insert(0);
            *c += 1;
            *c
        };
        if let Some(codes) = self.script.get(&probe.job.item_id) {
            if let Some(&code) = codes.get(n - 1) {
                return RawResponse::error(classify_http_status(code), format!("HTTP {code}"), 1);
            }
        }
        self.inner.send_probe(model, probe, timeout).await
    }
}

/// Tracks in-flight calls per provider.
struct Slow {
    inner: MockGateway,
    delay: Duration,
    in_flight: HashMap<String, AtomicUsize>,
    peak: HashMap<String, AtomicUsize>,
}

#[async_trait]
impl Gateway for Slow {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, timeout: Duration) -> RawResponse {
        let now = self.in_flight[&model.provider_id].fetch_add(1, Ordering::SeqCst) + 1;
        self.peak[&model.provider_id].fetch_max(now, Ordering::SeqCst);
        tokio::time::sleep(self.delay).await;
        self.in_flight[&model.provider_id].fetch_sub(1, Ordering::SeqCst);
        self.inner.send_probe(model, probe, timeout).await
    }
}

struct AlwaysDown;

#[async_trait]
impl Gateway for AlwaysDown {
    async fn send_probe(&self, model: &ModelSpec, _probe: &Probe<'_>, _timeout: Duration) -> RawResponse {
        if model.provider_id == "healthy" {
            return RawResponse {
                text: "4 - no strong view either way on this statement.".into(),
                prompt_tokens: 10,
                completion_tokens: 12,
                usage_missing: false,
                latency_ms: 0,
                attempt_count: 1,
                provider_status: ProviderStatus::Success,
                error_detail: None,
            };
        }
        RawResponse::error(ProviderStatus::RetryableError, "HTTP 503", 0)
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base_backoff_ms: 2,
        max_backoff_ms: 10,
    }
}

#[tokio::test]
async fn every_job_runs_exactly_once() {
    let (mut cfg, scales, ps) = small_config("once", 20, &["a", "b"], vec![mock_model("m1"), mock_model("m2")]);
    cfg.temperatures = vec![0.0, 1.0];
    cfg.limits.default = ProviderLimits {
        concurrency: 8,
        rate_per_sec: 10_000.0,
    };
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let total = manifest.jobs.len();
    let report = execute_run(manifest, Arc::new(neutral_gateway(&["a", "b"])), ExecOptions::default())
        .await
        .unwrap();
    assert_eq!(report.status, RunStatus::Completed);
    assert_eq!(report.manifest.count(JobStatus::Succeeded), total);
    assert_eq!(report.jobs_dispatched, total);
    let mut per_job = vec![0; total];
    for d in &report.dispatches {
        per_job[d.job_index] += 1;
    }
    assert!(per_job.iter().all(|&c| c == 1));
    // neutral mock at the midpoint keys to 4 either way when there is no jitter
    assert!(report
        .manifest
        .jobs
        .iter()
        .filter(|j| j.key.temperature == 0.0)
        .all(|j| j.outcome.as_ref().unwrap().keyed_score == Some(4)));
}

#[tokio::test]
async fn retryable_then_success_and_fatal_without_retry() {
    let (mut cfg, scales, ps) = small_config("retry", 4, &["a"], vec![mock_model("m")]);
    cfg.retry = fast_retry();
    let gateway = Scripted {
        inner: neutral_gateway(&["a"]),
        script: HashMap::from([
            ("s-001".to_string(), vec![429, 429]),
            ("s-002".to_string(), vec![401]),
            ("s-003".to_string(), vec![503; 9]),
        ]),
        calls: Mutex::new(HashMap::new()),
    };
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, Arc::new(gateway), ExecOptions::default()).await.unwrap();
    let by_item = |id: &str| report.manifest.jobs.iter().find(|j| j.key.item_id == id).unwrap();

    let ok = by_item("s-001");
    assert_eq!(ok.status, JobStatus::Succeeded);
    assert_eq!(ok.outcome.as_ref().unwrap().attempt_count, 3);

    let fatal = by_item("s-002");
    assert_eq!(fatal.status, JobStatus::FailedFatal);
    let o = fatal.outcome.as_ref().unwrap();
    assert_eq!(o.attempt_count, 1);
    assert_eq!(o.error_detail.as_deref(), Some("HTTP 401"));
    assert_eq!(o.parsed_score, None);

    let exhausted = by_item("s-003");
    assert_eq!(exhausted.status, JobStatus::FailedExhausted);
    assert_eq!(exhausted.outcome.as_ref().unwrap().attempt_count, 5);

    assert_eq!(report.status, RunStatus::Partial);
    let attempts = |item: &str| {
        let idx = report.manifest.jobs.iter().position(|j| j.key.item_id == item).unwrap();
        report.dispatches.iter().filter(|d| d.job_index == idx).count()
    };
    assert_eq!((attempts("s-001"), attempts("s-002"), attempts("s-003")), (3, 1, 5));
}

#[tokio::test]
async fn per_provider_concurrency_is_capped() {
    let models = vec![model_on("alpha", "m1"), model_on("beta", "m2")];
    let (mut cfg, scales, ps) = small_config("conc", 24, &["a"], models);
    cfg.limits.per_provider.insert(
        "alpha".into(),
        ProviderLimits {
            concurrency: 2,
            rate_per_sec: 10_000.0,
        },
    );
    cfg.limits.per_provider.insert(
        "beta".into(),
        ProviderLimits {
            concurrency: 5,
            rate_per_sec: 10_000.0,
        },
    );
    let gateway = Arc::new(Slow {
        inner: neutral_gateway(&["a"]),
        delay: Duration::from_millis(15),
        in_flight: HashMap::from([("alpha".into(), AtomicUsize::new(0)), ("beta".into(), AtomicUsize::new(0))]),
        peak: HashMap::from([("alpha".into(), AtomicUsize::new(0)), ("beta".into(), AtomicUsize::new(0))]),
    });
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, gateway.clone(), ExecOptions::default()).await.unwrap();
    assert_eq!(report.status, RunStatus::Completed);
    assert_eq!(gateway.peak["alpha"].load(Ordering::SeqCst), 2);
    assert_eq!(gateway.peak["beta"].load(Ordering::SeqCst), 5);
}

#[tokio::test(start_paused = true)]
async fn dispatch_log_respects_the_rate_window() {
    let (mut cfg, scales, ps) = small_config("rate", 100, &["a"], vec![mock_model("m")]);
    cfg.limits.default = ProviderLimits {
        concurrency: 32,
        rate_per_sec: 10.0,
    };
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, Arc::new(neutral_gateway(&["a"])), ExecOptions::default())
        .await
        .unwrap();
    assert_eq!(report.dispatches.len(), 100);
    let mut at: Vec<_> = report.dispatches.iter().map(|d| d.at).collect();
    at.sort();
    for (i, &t) in at.iter().enumerate() {
        let n = at[i..].iter().take_while(|&&u| u - t < Duration::from_secs(1)).count();
        assert!(n <= 10, "{n} dispatches within one second");
    }
    assert!(at[99] - at[0] >= Duration::from_secs(9));
}

#[tokio::test]
async fn budget_cap_halts_before_overspending() {
    let (mut cfg, scales, ps) = small_config("budget", 40, &["a"], vec![mock_model("m")]);
    cfg.budget_cap_usd = Some(2.0);
    cfg.limits.default.concurrency = 4;
    let prices = PriceSheet {
        schema_version: 1,
        prices: vec![PriceEntry {
            provider_id: "mock".into(),
            model_name: "m".into(),
            input_usd_per_1k_tokens: 1.0,
            output_usd_per_1k_tokens: 1.0,
        }],
    };
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let opts = ExecOptions {
        prices,
        ..ExecOptions::default()
    };
    let report = execute_run(manifest, Arc::new(neutral_gateway(&["a"])), opts).await.unwrap();
    assert_eq!(report.status, RunStatus::BudgetExceeded);
    assert!(report.manifest.accumulated_cost_usd <= 2.0);
    assert!(report.manifest.count(JobStatus::Pending) > 0);
    assert!(report.manifest.count(JobStatus::Succeeded) > 0);
}

#[tokio::test]
async fn unreachable_provider_halts_only_when_all_are_down() {
    let (mut cfg, scales, ps) = small_config("down", 30, &["a"], vec![model_on("dead", "m")]);
    cfg.retry = RetryPolicy {
        max_attempts: 2,
        base_backoff_ms: 1,
        max_backoff_ms: 1,
    };
    cfg.limits.default.concurrency = 1;
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, Arc::new(AlwaysDown), ExecOptions::default()).await.unwrap();
    assert_eq!(report.status, RunStatus::AllProvidersUnreachable);
    assert!(report.manifest.count(JobStatus::FailedExhausted) >= 10);
    assert!(report.manifest.count(JobStatus::Pending) > 0);

    let (mut cfg, scales, ps) = small_config("half", 30, &["a"], vec![model_on("dead", "m"), model_on("healthy", "h")]);
    cfg.retry = RetryPolicy {
        max_attempts: 2,
        base_backoff_ms: 1,
        max_backoff_ms: 1,
    };
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, Arc::new(AlwaysDown), ExecOptions::default()).await.unwrap();
    assert_eq!(report.status, RunStatus::Partial);
    assert_eq!(report.manifest.count(JobStatus::Pending), 0);
    assert_eq!(report.manifest.count(JobStatus::Succeeded), 30);
}

#[derive(Default)]
struct Recorder {
    started: AtomicUsize,
    finished: AtomicUsize,
    completed: Mutex<Vec<usize>>,
}

impl RunObserver for Recorder {
    fn on_event(&self, event: &RunEvent<'_>) {
        match event {
            RunEvent::Started { .. } => {
                self.started.fetch_add(1, Ordering::SeqCst);
            }
            RunEvent::JobFinished { progress, record, .. } => {
                assert!(record.status.is_terminal());
                self.completed.lock().unwrap().push(progress.completed);
            }
            RunEvent::Finished { .. } => {
                self.finished.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}

#[tokio::test]
async fn observer_sees_monotone_progress() {
    let (cfg, scales, ps) = small_config("obs", 25, &["a", "b"], vec![mock_model("m")]);
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let recorder = Arc::new(Recorder::default());
    let opts = ExecOptions {
        observer: Some(recorder.clone()),
        ..ExecOptions::default()
    };
    execute_run(manifest, Arc::new(neutral_gateway(&["a", "b"])), opts).await.unwrap();
    assert_eq!(recorder.started.load(Ordering::SeqCst), 1);
    assert_eq!(recorder.finished.load(Ordering::SeqCst), 1);
    let seen = recorder.completed.lock().unwrap().clone();
    assert_eq!(seen, (1..=50).collect::<Vec<_>>());
}

#[tokio::test]
async fn hash_mode_keeps_no_completion_text() {
    let (mut cfg, scales, ps) = small_config("private", 3, &["a"], vec![mock_model("m")]);
    cfg.store_raw_text = false;
    let manifest = plan_run(&cfg, &scales, &ps).unwrap();
    let report = execute_run(manifest, Arc::new(neutral_gateway(&["a"])), ExecOptions::default())
        .await
        .unwrap();
    for j in &report.manifest.jobs {
        let o = j.outcome.as_ref().unwrap();
        assert_eq!(o.raw_text, format!("sha256:{}", o.text_sha256));
        assert!(o.justification.is_empty());
        assert_eq!(o.parsed_score, Some(4));
    }
}

fn strip_time(rows: Vec<ResponsesRow>) -> Vec<ResponsesRow> {
    rows.into_iter()
        .map(|mut r| {
            r.timestamp_utc.clear();
            r
        })
        .collect()
}

#[tokio::test]
async fn interrupted_run_resumes_to_the_same_result() {
    let study = study("runs/mini.yaml");
    let gateway: Arc<dyn Gateway> = Arc::new(MockGateway::load(&workdir().join("mock/policy.yaml")).unwrap());
    let opts = || ExecOptions {
        prices: study.prices.clone(),
        ..ExecOptions::default()
    };

    let straight = execute_run(study.plan().unwrap(), gateway.clone(), opts()).await.unwrap();
    assert_eq!(straight.status, RunStatus::Completed);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    let total = straight.manifest.jobs.len();
    let killed = execute_run(
        study.plan().unwrap(),
        gateway.clone(),
        ExecOptions {
            checkpoint_path: Some(path.clone()),
            abort_after: Some(total / 2),
            ..opts()
        },
    )
    .await
    .unwrap();
    assert_eq!(killed.status, RunStatus::Interrupted);

    let on_disk = load_manifest(&path).unwrap();
    let done = on_disk.count(JobStatus::Succeeded);
    assert!(done > 0 && done < total, "{done} of {total} checkpointed");
    let kept: Vec<_> = on_disk.jobs.iter().filter(|j| j.status == JobStatus::Succeeded).cloned().collect();

    let resumed = resume_run(
        on_disk,
        Some(&study.config),
        gateway.clone(),
        ExecOptions {
            checkpoint_path: Some(path.clone()),
            ..opts()
        },
    )
    .await
    .unwrap();
    assert_eq!(resumed.status, RunStatus::Completed);
    assert_eq!(resumed.jobs_dispatched, total - done);
    for k in &kept {
        assert!(resumed.manifest.jobs.contains(k));
    }
    assert_eq!(
        strip_time(rows_from_manifest(&resumed.manifest)),
        strip_time(rows_from_manifest(&straight.manifest))
    );
    assert!((resumed.manifest.accumulated_cost_usd - straight.manifest.accumulated_cost_usd).abs() < 1e-12);
    assert_eq!(load_manifest(&path).unwrap(), resumed.manifest);

    let mut changed = study.config.clone();
    changed.repeats += 1;
    let err = resume_run(load_manifest(&path).unwrap(), Some(&changed), gateway, opts())
        .await
        .unwrap_err();
    assert!(err.to_string().contains("differs"), "{err}");
}

#[test]
fn backoff_is_deterministic_bounded_and_capped() {
    let policy = RetryPolicy {
        max_attempts: 8,
        base_backoff_ms: 100,
        max_backoff_ms: 1_000,
    };
    let key = JobKey {
        run_id: "r".into(),
        scale_id: "s".into(),
        item_id: "i".into(),
        persona_id: "p".into(),
        provider_id: "x".into(),
        model_name: "m".into(),
        temperature: 0.0,
        repeat_index: 0,
    };
    for attempt in 1..=8u32 {
        let nominal = (100u64 << (attempt - 1)).min(1_000) as f64 / 1000.0;
        let d = backoff_delay(&policy, 3, &key, attempt).as_secs_f64();
        assert!(d >= 0.5 * nominal && d < 1.5 * nominal, "attempt {attempt}: {d}");
        assert_eq!(backoff_delay(&policy, 3, &key, attempt), backoff_delay(&policy, 3, &key, attempt));
    }
}
