//! Uniform adapter over chat-completion providers.
//!
//! A [`Gateway`] performs exactly one round trip per call; retry policy lives
//! in the dispatcher. Remote adapters speak either the OpenAI-compatible chat
//! schema or the Anthropic messages schema. The [`mock::MockGateway`] answers
//! offline from a deterministic policy.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::dispatch::JobKey;
use crate::persona::PromptText;
use crate::scale::{ResponseScale, ScaleItem};

pub mod cost;
pub mod factory;
pub mod http;
pub mod mock;

pub use cost::{record_cost, PriceEntry, PriceSheet};
pub use factory::{mock_gateway, DefaultGateways, GatewayFactory};
pub use http::HttpGateway;
pub use mock::{mock_respond, MockGateway, MockPolicy, PersonaBias, SeedMaterial};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiSchema {
    #[default]
    Openai,
    Anthropic,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider_id: String,
    pub model_name: String,
    #[serde(default)]
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub schema: ApiSchema,
}

fn default_max_output() -> u32 {
    256
}

impl ModelSpec {
    pub fn is_remote(&self) -> bool {
        self.schema != ApiSchema::Mock
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderStatus {
    Success,
    RetryableError,
    FatalError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// The provider payload carried no usage block; token counts are zero and cost is unknown.
    #[serde(default)]
    pub usage_missing: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub provider_status: ProviderStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

impl RawResponse {
    pub fn error(status: ProviderStatus, detail: impl Into<String>, latency_ms: u64) -> Self {
        RawResponse {
            text: String::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            usage_missing: true,
            latency_ms,
            attempt_count: 1,
            provider_status: status,
            error_detail: Some(detail.into()),
        }
    }
}

/// Everything a provider may need to answer one job. Remote adapters only
/// read `prompt`; the mock also keys off the job identity.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub job: &'a JobKey,
    pub prompt: &'a PromptText,
    pub item: &'a ScaleItem,
    pub scale: &'a ResponseScale,
    pub run_seed: u64,
}

#[async_trait]
pub trait Gateway: Send + Sync {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, timeout: Duration) -> RawResponse;
}

/// HTTP status → outcome class. 2xx is success; 408, 425, 429 and 5xx are
/// retryable; every other code is fatal.
pub fn classify_http_status(code: u16) -> ProviderStatus {
    match code {
        200..=299 => ProviderStatus::Success,
        408 | 425 | 429 | 500..=599 => ProviderStatus::RetryableError,
        _ => ProviderStatus::FatalError,
    }
}

/// Sends mock-schema models to the mock gateway and everything else to HTTP.
pub struct RoutingGateway {
    pub http: Option<HttpGateway>,
    pub mock: Option<MockGateway>,
}

#[async_trait]
impl Gateway for RoutingGateway {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, timeout: Duration) -> RawResponse {
        match (model.schema, &self.http, &self.mock) {
            (ApiSchema::Mock, _, Some(m)) => m.send_probe(model, probe, timeout).await,
            (_, Some(h), _) if model.is_remote() => h.send_probe(model, probe, timeout).await,
            (_, _, Some(m)) => m.send_probe(model, probe, timeout).await,
            _ => RawResponse::error(
                ProviderStatus::FatalError,
                format!("no adapter configured for provider `{}`", model.provider_id),
                0,
            ),
        }
    }
}
