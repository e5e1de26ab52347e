//! Offline, deterministic stand-in for a chat model.
//!
//! Each persona carries a direction and magnitude; the emitted score is
//! `clamp(round(center + direction * magnitude * key) + jitter, min, max)`
//! where `key` is +1 for normally keyed items and -1 for reverse-scored ones.
//!
//! Jitter is stratified over repeats: within one (model, persona, scale,
//! temperature) cell, repeat `r` uses offset `offsets[(h + r) % len]` with `h`
//! a seeded hash of the cell. Every block of `len` consecutive repeats
//! therefore visits each offset exactly once, and all items of a repeat share
//! the same offset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gateway, ModelSpec, Probe, ProviderStatus, RawResponse};
use crate::dispatch::JobKey;
use crate::error::{Error, Result};
use crate::scale::{ResponseScale, ScaleItem};
use crate::storage::{read_yaml, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonaBias {
    /// -1, 0 or +1.
    pub direction: i8,
    #[serde(default)]
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterRule {
    pub temperature: f64,
    pub offsets: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockPolicy {
    pub personas: BTreeMap<String, PersonaBias>,
    /// Defaults to the scale midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default = "default_jitter")]
    pub jitter: Vec<JitterRule>,
    /// Placeholders: `{score}`, `{min}`, `{max}`, `{label}`, `{why}`.
    #[serde(default = "default_templates")]
    pub templates: Vec<String>,
}

fn default_jitter() -> Vec<JitterRule> {
    vec![
        JitterRule {
            temperature: 0.0,
            offsets: vec![0],
        },
        JitterRule {
            temperature: 1.0,
            offsets: vec![-1, 0, 1],
        },
    ]
}

fn default_templates() -> Vec<String> {
    [
        "{score} - {why}",
        "Score: {score}. {why}",
        "{score}/{max}. {why}",
        "I would choose {score} ({label}). {why}",
        "**{score}** — {why}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

const REASONS: &[&str] = &[
    "Because order and liberty must balance, and neither should be absolute.",
    "Stable institutions matter, yet they must remain open to honest criticism.",
    "Communities do best when they can question authority without being punished.",
    "Tradition carries hard-won lessons, although it should not silence dissent.",
    "Protecting individual conscience is central to a healthy and fair society.",
];

impl MockPolicy {
    pub fn neutral(persona_ids: &[&str]) -> Self {
        MockPolicy {
            personas: persona_ids
                .iter()
                .map(|p| {
                    (
                        p.to_string(),
                        PersonaBias {
                            direction: 0,
                            magnitude: 0.0,
                        },
                    )
                })
                .collect(),
            center: None,
            jitter: default_jitter(),
            templates: default_templates(),
        }
    }

    pub fn offsets_at(&self, temperature: f64) -> &[i32] {
        self.jitter
            .iter()
            .find(|j| j.temperature == temperature)
            .map(|j| j.offsets.as_slice())
            .filter(|o| !o.is_empty())
            .unwrap_or(&[0])
    }

    /// The score before jitter.
    pub fn base_score(&self, persona_id: &str, item: &ScaleItem, scale: &ResponseScale) -> Result<i32> {
        let bias = self.personas.get(persona_id).ok_or_else(|| Error::Unresolved {
            kind: "mock persona",
            id: persona_id.to_string(),
        })?;
        let center = self.center.unwrap_or_else(|| scale.midpoint());
        let key = if item.reverse_scored { -1.0 } else { 1.0 };
        let raw = (center + bias.direction.signum() as f64 * bias.magnitude * key).round() as i32;
        Ok(raw.clamp(scale.min, scale.max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMaterial<'a> {
    pub run_seed: u64,
    pub job: &'a JobKey,
}

pub(crate) fn hash64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Index into the jitter offsets for a job; see the module docs.
pub fn jitter_index(seed: &SeedMaterial<'_>, n_offsets: usize) -> usize {
    let j = seed.job;
    let cell = hash64(&[
        &seed.run_seed.to_string(),
        &j.model_name,
        &j.persona_id,
        &j.scale_id,
        &j.temperature.to_string(),
    ]);
    ((cell % n_offsets as u64 + j.repeat_index as u64 % n_offsets as u64) % n_offsets as u64) as usize
}

pub(crate) fn approx_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

pub fn mock_respond(
    policy: &MockPolicy,
    persona_id: &str,
    item: &ScaleItem,
    scale: &ResponseScale,
    temperature: f64,
    prompt_chars: usize,
    seed: &SeedMaterial<'_>,
) -> Result<RawResponse> {
    let base = policy.base_score(persona_id, item, scale)?;
    let offsets = policy.offsets_at(temperature);
    let offset = offsets[jitter_index(seed, offsets.len())];
    let score = (base + offset).clamp(scale.min, scale.max);

    let pick = hash64(&[&seed.run_seed.to_string(), &seed.job.to_string()]);
    let templates = if policy.templates.is_empty() {
        default_templates()
    } else {
        policy.templates.clone()
    };
    let template = &templates[(pick % templates.len() as u64) as usize];
    let why = REASONS[((pick >> 16) % REASONS.len() as u64) as usize];
    let text = template
        .replace("{score}", &score.to_string())
        .replace("{min}", &scale.min.to_string())
        .replace("{max}", &scale.max.to_string())
        .replace("{label}", scale.label_for(score).unwrap_or(""))
        .replace("{why}", why);

    Ok(RawResponse {
        prompt_tokens: approx_tokens(prompt_chars),
        completion_tokens: approx_tokens(text.chars().count()),
        text,
        usage_missing: false,
        latency_ms: 0,
        attempt_count: 1,
        provider_status: ProviderStatus::Success,
        error_detail: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockPolicyFile {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub default: MockPolicy,
    /// Per model_name overrides.
    #[serde(default)]
    pub models: BTreeMap<String, MockPolicy>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Serves every model from its configured [`MockPolicy`].
#[derive(Debug, Clone)]
pub struct MockGateway {
    pub default_policy: MockPolicy,
    pub per_model: BTreeMap<String, MockPolicy>,
    /// Simulated service time per call; reported as the latency.
    pub latency: Duration,
}

impl MockGateway {
    pub fn new(default_policy: MockPolicy) -> Self {
        MockGateway {
            default_policy,
            per_model: BTreeMap::new(),
            latency: Duration::ZERO,
        }
    }

    pub fn from_file(file: MockPolicyFile) -> Self {
        MockGateway {
            default_policy: file.default,
            per_model: file.models,
            latency: Duration::ZERO,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_file(read_yaml(path)?))
    }

    pub fn with_model(mut self, model_name: &str, policy: MockPolicy) -> Self {
        self.per_model.insert(model_name.to_string(), policy);
        self
    }

    pub fn policy_for(&self, model_name: &str) -> &MockPolicy {
        self.per_model.get(model_name).unwrap_or(&self.default_policy)
    }
}

#[async_trait]
impl Gateway for MockGateway {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, _timeout: Duration) -> RawResponse {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let seed = SeedMaterial {
            run_seed: probe.run_seed,
            job: probe.job,
        };
        match mock_respond(
            self.policy_for(&model.model_name),
            &probe.job.persona_id,
            probe.item,
            probe.scale,
            probe.job.temperature,
            probe.prompt.char_length,
            &seed,
        ) {
            Ok(mut r) => {
                r.latency_ms = self.latency.as_millis() as u64;
                r
            }
            Err(e) => RawResponse::error(ProviderStatus::FatalError, e.to_string(), 0),
        }
    }
}
