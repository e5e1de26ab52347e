//! Run planning, cost estimation, and concurrent execution.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{ModelSpec, ProviderStatus, RawResponse};
use crate::parser::{parse_response, ParseStatus};
use crate::persona::{assemble_prompt, Persona, PromptText};
use crate::scale::{reverse_code, ScaleDefinition, ScaleItem};
use crate::storage::SCHEMA_VERSION;

pub mod config;
pub mod estimate;
pub mod execute;
pub mod limiter;

pub use config::{validate_run_config, Limits, ProviderLimits, RetryPolicy, RunConfig, Sources, Study};
pub use estimate::{estimate_cost, estimate_remaining, CostEstimate, ModelEstimate};
pub use execute::{
    backoff_delay, execute_run, resume_run, Dispatch, ExecOptions, Progress, RunEvent, RunObserver, RunReport,
    RunStatus,
};
pub use limiter::RateLimiter;

/// Identity of one probe. Unique within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobKey {
    pub run_id: String,
    pub scale_id: String,
    pub item_id: String,
    pub persona_id: String,
    pub provider_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub repeat_index: u32,
}

impl fmt::Display for JobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}|{}|{}|{}",
            self.run_id,
            self.scale_id,
            self.item_id,
            self.persona_id,
            self.provider_id,
            self.model_name,
            self.temperature,
            self.repeat_index
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Succeeded,
    FailedFatal,
    FailedExhausted,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        self != JobStatus::Pending
    }
}

/// Result of the final attempt of a job, parsed and keyed at record time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub raw_text: String,
    pub text_sha256: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usage_missing: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub provider_status: ProviderStatus,
    pub error_detail: Option<String>,
    pub cost_usd: Option<f64>,
    pub parsed_score: Option<i32>,
    pub keyed_score: Option<i32>,
    pub parse_status: Option<ParseStatus>,
    pub justification: String,
    pub completed_utc: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub key: JobKey,
    pub item_index: u32,
    pub reverse_scored: bool,
    pub subscale_id: Option<String>,
    pub prompt: PromptText,
    pub status: JobStatus,
    pub outcome: Option<JobOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub config: RunConfig,
    pub config_digest: String,
    /// Snapshot of the scales and personas the plan was built from.
    pub scales: Vec<ScaleDefinition>,
    pub personas: Vec<Persona>,
    pub created_utc: DateTime<Utc>,
    pub updated_utc: DateTime<Utc>,
    pub accumulated_cost_usd: f64,
    /// Terminal jobs whose cost could not be determined.
    pub unknown_cost_jobs: usize,
    pub jobs: Vec<JobRecord>,
}

impl RunManifest {
    pub fn expected_job_count(&self) -> usize {
        let items: usize = self.scales.iter().map(|s| s.items.len()).sum();
        items
            * self.config.personas.len()
            * self.config.models.len()
            * self.config.temperatures.len()
            * self.config.repeats as usize
    }

    pub fn scale(&self, scale_id: &str) -> Option<&ScaleDefinition> {
        self.scales.iter().find(|s| s.scale_id == scale_id)
    }

    pub fn model(&self, provider_id: &str, model_name: &str) -> Option<&ModelSpec> {
        self.config
            .models
            .iter()
            .find(|m| m.provider_id == provider_id && m.model_name == model_name)
    }

    pub fn count(&self, status: JobStatus) -> usize {
        self.jobs.iter().filter(|j| j.status == status).count()
    }

    pub fn completed(&self) -> usize {
        self.jobs.iter().filter(|j| j.status.is_terminal()).count()
    }

    pub fn failures(&self) -> usize {
        self.jobs
            .iter()
            .filter(|j| matches!(j.status, JobStatus::FailedFatal | JobStatus::FailedExhausted))
            .count()
    }

    /// Recompute the cost totals from the per-job records, in job order.
    pub fn recompute_costs(&mut self) {
        let mut total = 0.0;
        let mut unknown = 0;
        for j in &self.jobs {
            if let Some(o) = &j.outcome {
                match o.cost_usd {
                    Some(c) => total += c,
                    None => unknown += 1,
                }
            }
        }
        self.accumulated_cost_usd = total;
        self.unknown_cost_jobs = unknown;
    }

    /// Structural checks performed on load.
    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let expected = self.expected_job_count();
        if self.jobs.len() != expected {
            return Err(Error::Manifest(format!(
                "job count {} does not match the plan ({expected} expected)",
                self.jobs.len()
            )));
        }
        if self.config_digest != self.config.plan_digest() {
            return Err(Error::Manifest("config digest does not match config snapshot".into()));
        }
        for j in &self.jobs {
            if j.status.is_terminal() != j.outcome.is_some() {
                return Err(Error::Manifest(format!("job {} has inconsistent status", j.key)));
            }
        }
        Ok(())
    }
}

/// Enumerate every job of the cross-product in deterministic order:
/// scale, item index, persona, model, temperature, repeat.
pub fn plan_run(config: &RunConfig, scales: &[ScaleDefinition], personas: &[Persona]) -> Result<RunManifest> {
    let violations = validate_run_config(config, scales, personas);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let scale_snapshot: Vec<ScaleDefinition> = config
        .scales
        .iter()
        .map(|id| scales.iter().find(|s| &s.scale_id == id).unwrap().clone())
        .collect();
    let persona_snapshot: Vec<Persona> = config
        .personas
        .iter()
        .map(|id| personas.iter().find(|p| &p.persona_id == id).unwrap().clone())
        .collect();

    let mut jobs = Vec::new();
    for scale in &scale_snapshot {
        for item in scale.ordered_items() {
            for persona in &persona_snapshot {
                let prompt = assemble_prompt(persona, item, &scale.response_scale);
                for model in &config.models {
                    for &temperature in &config.temperatures {
                        for repeat_index in 0..config.repeats {
                            jobs.push(JobRecord {
                                key: JobKey {
                                    run_id: config.run_id.clone(),
                                    scale_id: scale.scale_id.clone(),
                                    item_id: item.item_id.clone(),
                                    persona_id: persona.persona_id.clone(),
                                    provider_id: model.provider_id.clone(),
                                    model_name: model.model_name.clone(),
                                    temperature,
                                    repeat_index,
                                },
                                item_index: item.index,
                                reverse_scored: item.reverse_scored,
                                subscale_id: item.subscale_id.clone(),
                                prompt: prompt.clone(),
                                status: JobStatus::Pending,
                                outcome: None,
                            });
                        }
                    }
                }
            }
        }
    }
    let now = Utc::now();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        run_id: config.run_id.clone(),
        config: config.clone(),
        config_digest: config.plan_digest(),
        scales: scale_snapshot,
        personas: persona_snapshot,
        created_utc: now,
        updated_utc: now,
        accumulated_cost_usd: 0.0,
        unknown_cost_jobs: 0,
        jobs,
    };
    debug_assert_eq!(manifest.jobs.len(), manifest.expected_job_count());
    Ok(manifest)
}

pub(crate) fn outcome_from_response(
    resp: RawResponse,
    item: &ScaleItem,
    scale: &ScaleDefinition,
    cost_usd: Option<f64>,
) -> (JobStatus, JobOutcome) {
    let (parsed_score, keyed_score, parse_status, justification) =
        if resp.provider_status == ProviderStatus::Success {
            let p = parse_response(&resp.text, &scale.response_scale);
            let keyed = p.score.map(|s| {
                if item.reverse_scored {
                    reverse_code(s, &scale.response_scale).unwrap_or(s)
                } else {
                    s
                }
            });
            (p.score, keyed, Some(p.parse_status), p.justification)
        } else {
            (None, None, None, String::new())
        };
    let status = match resp.provider_status {
        ProviderStatus::Success => JobStatus::Succeeded,
        ProviderStatus::FatalError => JobStatus::FailedFatal,
        ProviderStatus::RetryableError => JobStatus::FailedExhausted,
    };
    let outcome = JobOutcome {
        text_sha256: hex::encode(Sha256::digest(resp.text.as_bytes())),
        raw_text: resp.text,
        prompt_tokens: resp.prompt_tokens,
        completion_tokens: resp.completion_tokens,
        usage_missing: resp.usage_missing,
        latency_ms: resp.latency_ms,
        attempt_count: resp.attempt_count,
        provider_status: resp.provider_status,
        error_detail: resp.error_detail,
        cost_usd,
        parsed_score,
        keyed_score,
        parse_status,
        justification,
        completed_utc: Utc::now(),
    };
    (status, outcome)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gateway::ApiSchema;
    use crate::scale::{ResponseScale, ScoringRule};

    pub(crate) fn fixture_scale(id: &str, n: u32) -> ScaleDefinition {
        ScaleDefinition {
            scale_id: id.into(),
            name: id.into(),
            length: Some(n as usize),
            scoring_rule: ScoringRule::Mean,
            response_scale: ResponseScale::agreement_7(),
            subscales: vec![],
            items: (1..=n)
                .map(|i| ScaleItem {
                    item_id: format!("{id}-{i:02}"),
                    index: i,
                    text: format!("Fixture statement {i} of {id}."),
                    reverse_scored: i % 3 == 0,
                    subscale_id: None,
                })
                .collect(),
        }
    }

    pub(crate) fn personas(n: usize) -> Vec<Persona> {
        (0..n)
            .map(|i| Persona {
                persona_id: format!("p{i}"),
                label: format!("P{i}"),
                preamble: if i == 0 { String::new() } else { format!("You are persona {i}.") },
                is_baseline: i == 0,
            })
            .collect()
    }

    pub(crate) fn mock_model(name: &str) -> ModelSpec {
        ModelSpec {
            provider_id: "mock".into(),
            model_name: name.into(),
            endpoint_url: String::new(),
            auth_env_var: None,
            max_output_tokens: 256,
            schema: ApiSchema::Mock,
        }
    }

    #[test]
    fn study_grid_job_count() {
        let scales = vec![fixture_scale("rwa", 22), fixture_scale("lwa", 39)];
        let ps = personas(6);
        let ids: Vec<&str> = ps.iter().map(|p| p.persona_id.as_str()).collect();
        let cfg = RunConfig::new(
            "grid",
            &["rwa", "lwa"],
            &ids,
            vec![mock_model("a"), mock_model("b"), mock_model("c")],
        );
        let m = plan_run(&cfg, &scales, &ps).unwrap();
        assert_eq!(m.jobs.len(), 2196);
        assert_eq!(m.jobs.len(), 61 * 6 * 3 * 2);
        assert!(m.jobs.iter().all(|j| j.status == JobStatus::Pending));
        // ordering: scale, item, persona, model, temperature, repeat
        assert_eq!(m.jobs[0].key.item_id, "rwa-01");
        assert_eq!(m.jobs[1].key.temperature, 1.0);
        assert_eq!(m.jobs[2].key.model_name, "b");
        assert_eq!(m.jobs[6].key.persona_id, "p1");
        assert_eq!(m.jobs[36].key.item_id, "rwa-02");
        m.check().unwrap();
    }

    #[test]
    fn single_job_plan() {
        let scales = vec![fixture_scale("s", 1)];
        let ps = personas(1);
        let mut cfg = RunConfig::new("one", &["s"], &["p0"], vec![mock_model("a")]);
        cfg.temperatures = vec![0.0];
        assert_eq!(plan_run(&cfg, &scales, &ps).unwrap().jobs.len(), 1);
    }

    #[test]
    fn unresolved_ids_and_empty_plans_are_rejected() {
        let scales = vec![fixture_scale("s", 2)];
        let ps = personas(1);
        let cfg = RunConfig::new("x", &["nope"], &["p0"], vec![mock_model("a")]);
        let err = plan_run(&cfg, &scales, &ps).unwrap_err();
        assert!(err
            .violations()
            .iter()
            .any(|v| v.rule == crate::scale::Rule::ConfigUnresolvedId));
        let cfg = RunConfig::new("x", &["s"], &["p0"], vec![]);
        let err = plan_run(&cfg, &scales, &ps).unwrap_err();
        assert!(err
            .violations()
            .iter()
            .any(|v| v.rule == crate::scale::Rule::ConfigEmptyPlan));
    }

    #[test]
    fn plan_above_ten_thousand_jobs() {
        let scales = vec![fixture_scale("rwa", 22), fixture_scale("lwa", 39)];
        let ps = personas(6);
        let ids: Vec<&str> = ps.iter().map(|p| p.persona_id.as_str()).collect();
        let models = (0..5).map(|i| mock_model(&format!("m{i}"))).collect();
        let mut cfg = RunConfig::new("big", &["rwa", "lwa"], &ids, models);
        cfg.repeats = 3;
        let m = plan_run(&cfg, &scales, &ps).unwrap();
        assert_eq!(m.jobs.len(), 10_980);
        let unique: std::collections::HashSet<String> = m.jobs.iter().map(|j| j.key.to_string()).collect();
        assert_eq!(unique.len(), 10_980);
    }
}
