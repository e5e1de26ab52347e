use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{ModelSpec, PriceSheet};
use crate::persona::{load_personas, Persona};
use crate::scale::{load_scale_bundles, Rule, ScaleDefinition, Violation};
use crate::storage::{read_yaml, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProviderLimits {
    /// Maximum in-flight requests.
    pub concurrency: u32,
    /// Requests per second.
    pub rate_per_sec: f64,
}

impl Default for ProviderLimits {
    fn default() -> Self {
        ProviderLimits {
            concurrency: 8,
            rate_per_sec: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(default)]
    pub default: ProviderLimits,
    #[serde(default)]
    pub per_provider: BTreeMap<String, ProviderLimits>,
}

impl Limits {
    pub fn for_provider(&self, provider_id: &str) -> ProviderLimits {
        self.per_provider
            .get(provider_id)
            .copied()
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

/// Files a run draws on, relative to the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sources {
    #[serde(default)]
    pub scale_bundles: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_bundle: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_sheet: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_policy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub run_id: String,
    #[serde(default)]
    pub sources: Sources,
    pub scales: Vec<String>,
    pub personas: Vec<String>,
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap_usd: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// When false, exports carry `sha256:<hex>` in place of the completion text.
    #[serde(default = "default_true")]
    pub store_raw_text: bool,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_temperatures() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn default_repeats() -> u32 {
    1
}
fn default_checkpoint() -> usize {
    50
}
fn default_timeout() -> u64 {
    60_000
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_yaml(path)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "{}: schema_version {} is not supported",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Minimal config over the given ids with every tunable at its default.
    pub fn new(run_id: &str, scales: &[&str], personas: &[&str], models: Vec<ModelSpec>) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            sources: Sources::default(),
            scales: scales.iter().map(|s| s.to_string()).collect(),
            personas: personas.iter().map(|s| s.to_string()).collect(),
            models,
            temperatures: default_temperatures(),
            repeats: 1,
            limits: Limits::default(),
            retry: RetryPolicy::default(),
            budget_cap_usd: None,
            seed: 0,
            checkpoint_every: 50,
            timeout_ms: 60_000,
            store_raw_text: true,
        }
    }

    /// Digest of the fields that determine the job set and their prompts.
    /// Resuming under a config with a different digest is refused.
    pub fn plan_digest(&self) -> String {
        let identity = serde_json::json!({
            "run_id": self.run_id,
            "scales": self.scales,
            "personas": self.personas,
            "models": self.models,
            "temperatures": self.temperatures,
            "repeats": self.repeats,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(identity.to_string().as_bytes()))
    }
}

pub fn validate_run_config(
    cfg: &RunConfig,
    scales: &[ScaleDefinition],
    personas: &[Persona],
) -> Vec<Violation> {
    let subject = format!("run `{}`", cfg.run_id);
    let mut out = Vec::new();
    let invalid = |msg: String| Violation::new(&subject, Rule::ConfigInvalidValue, msg);

    if cfg.run_id.trim().is_empty() {
        out.push(invalid("run_id is empty".into()));
    }
    for s in &cfg.scales {
        if !scales.iter().any(|d| &d.scale_id == s) {
            out.push(Violation::new(
                &subject,
                Rule::ConfigUnresolvedId,
                format!("scale `{s}` is not declared in any scale bundle"),
            ));
        }
    }
    for p in &cfg.personas {
        if !personas.iter().any(|d| &d.persona_id == p) {
            out.push(Violation::new(
                &subject,
                Rule::ConfigUnresolvedId,
                format!("persona `{p}` is not declared in the persona bundle"),
            ));
        }
    }
    let mut seen = HashSet::new();
    for list in [&cfg.scales, &cfg.personas] {
        for id in list {
            if !seen.insert(id.clone()) {
                out.push(invalid(format!("`{id}` listed twice")));
            }
        }
        seen.clear();
    }
    let mut models = HashSet::new();
    for m in &cfg.models {
        if !models.insert((m.provider_id.clone(), m.model_name.clone())) {
            out.push(invalid(format!(
                "model {}/{} listed twice",
                m.provider_id, m.model_name
            )));
        }
        if m.is_remote() && reqwest::Url::parse(&m.endpoint_url).is_err() {
            out.push(invalid(format!(
                "model {}/{} has malformed endpoint_url `{}`",
                m.provider_id, m.model_name, m.endpoint_url
            )));
        }
        if m.max_output_tokens == 0 {
            out.push(invalid(format!("model {} has max_output_tokens 0", m.model_name)));
        }
    }
    let mut temps: Vec<f64> = Vec::new();
    for &t in &cfg.temperatures {
        if !(0.0..=2.0).contains(&t) {
            out.push(invalid(format!("temperature {t} outside [0, 2]")));
        }
        if temps.contains(&t) {
            out.push(invalid(format!("temperature {t} listed twice")));
        }
        temps.push(t);
    }
    if cfg.repeats < 1 {
        out.push(invalid("repeats must be at least 1".into()));
    }
    let mut limit_sets = vec![("default".to_string(), cfg.limits.default)];
    limit_sets.extend(cfg.limits.per_provider.iter().map(|(k, v)| (k.clone(), *v)));
    for (name, l) in limit_sets {
        if l.concurrency == 0 || !(l.rate_per_sec > 0.0 && l.rate_per_sec.is_finite()) {
            out.push(invalid(format!("limits for `{name}` must be positive")));
        }
    }
    if cfg.retry.max_attempts == 0 {
        out.push(invalid("retry.max_attempts must be at least 1".into()));
    }
    if cfg.checkpoint_every == 0 {
        out.push(invalid("checkpoint_every must be positive".into()));
    }
    if let Some(cap) = cfg.budget_cap_usd {
        if !(cap >= 0.0 && cap.is_finite()) {
            out.push(invalid(format!("budget_cap_usd {cap} is not a non-negative number")));
        }
    }
    let items: usize = cfg
        .scales
        .iter()
        .filter_map(|s| scales.iter().find(|d| &d.scale_id == s))
        .map(|d| d.items.len())
        .sum();
    if items == 0 || cfg.personas.is_empty() || cfg.models.is_empty() || cfg.temperatures.is_empty() {
        out.push(Violation::new(
            &subject,
            Rule::ConfigEmptyPlan,
            "the scales x personas x models x temperatures cross-product is empty",
        ));
    }
    out
}

/// A run config together with everything its `sources` point at.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: RunConfig,
    pub scales: Vec<ScaleDefinition>,
    pub personas: Vec<Persona>,
    pub prices: PriceSheet,
}

impl Study {
    /// Load `config_path` and its sources. Relative paths resolve against `workdir`.
    pub fn load(workdir: &Path, config_path: &Path) -> Result<Study> {
        let config = RunConfig::load(&workdir.join(config_path))?;
        Study::from_config(workdir, config)
    }

    pub fn from_config(workdir: &Path, config: RunConfig) -> Result<Study> {
        let bundles: Vec<PathBuf> = config.sources.scale_bundles.iter().map(|p| workdir.join(p)).collect();
        let scales = load_scale_bundles(&bundles)?;
        let personas = match &config.sources.persona_bundle {
            Some(p) => load_personas(&workdir.join(p))?,
            None => Vec::new(),
        };
        let prices = match &config.sources.price_sheet {
            Some(p) => PriceSheet::load(&workdir.join(p))?,
            None => PriceSheet::default(),
        };
        let violations = validate_run_config(&config, &scales, &personas);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok(Study {
            config,
            scales,
            personas,
            prices,
        })
    }

    pub fn plan(&self) -> Result<super::RunManifest> {
        super::plan_run(&self.config, &self.scales, &self.personas)
    }

    /// Cost bounds under the study's own price sheet.
    pub fn estimate(&self) -> Result<super::CostEstimate> {
        self.estimate_with(&self.prices)
    }

    pub fn estimate_with(&self, prices: &PriceSheet) -> Result<super::CostEstimate> {
        Ok(super::estimate_cost(&self.plan()?, prices))
    }
}
