use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{classify_http_status, ApiSchema, Gateway, ModelSpec, Probe, ProviderStatus, RawResponse};
use crate::error::{Error, Result};

const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Remote chat-completion adapter. Credentials are read from the environment
/// once, at construction.
pub struct HttpGateway {
    client: reqwest::Client,
    credentials: BTreeMap<String, String>,
}

impl HttpGateway {
    pub fn new(models: &[ModelSpec]) -> Result<Self> {
        let mut credentials = BTreeMap::new();
        for m in models.iter().filter(|m| m.is_remote()) {
            if let Some(var) = &m.auth_env_var {
                let value = std::env::var(var).map_err(|_| Error::MissingCredential(var.clone()))?;
                credentials.insert(var.clone(), value);
            }
        }
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| Error::Schema(format!("http client: {e}")))?;
        Ok(HttpGateway {
            client,
            credentials,
        })
    }

    /// Both schemas accept the same request shape; the whole assembled prompt
    /// goes out as a single user message.
    fn request_body(model: &ModelSpec, prompt: &str, temperature: f64) -> Value {
        json!({
            "model": model.model_name,
            "max_tokens": model.max_output_tokens,
            "temperature": temperature,
            "messages": [{ "role": "user", "content": prompt }],
        })
    }
}

/// Pull completion text and usage out of a provider payload.
pub(crate) fn extract(schema: ApiSchema, body: &Value) -> std::result::Result<(String, Option<(u64, u64)>), String> {
    match schema {
        ApiSchema::Anthropic => {
            let blocks = body
                .get("content")
                .and_then(Value::as_array)
                .ok_or("missing `content` array")?;
            let text: String = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("");
            let usage = body.get("usage").and_then(|u| {
                Some((
                    u.get("input_tokens")?.as_u64()?,
                    u.get("output_tokens")?.as_u64()?,
                ))
            });
            Ok((text, usage))
        }
        _ => {
            let text = body
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or("missing `choices[0].message.content`")?
                .to_string();
            let usage = body.get("usage").and_then(|u| {
                Some((
                    u.get("prompt_tokens")?.as_u64()?,
                    u.get("completion_tokens")?.as_u64()?,
                ))
            });
            Ok((text, usage))
        }
    }
}

fn excerpt(s: &str) -> String {
    let mut out: String = s.chars().take(200).collect();
    if s.chars().count() > 200 {
        out.push('…');
    }
    out
}

#[async_trait]
impl Gateway for HttpGateway {
    async fn send_probe(&self, model: &ModelSpec, probe: &Probe<'_>, timeout: Duration) -> RawResponse {
        let started = Instant::now();
        let elapsed = || started.elapsed().as_millis() as u64;
        let body = Self::request_body(model, &probe.prompt.text, probe.job.temperature);
        let mut req = self
            .client
            .post(&model.endpoint_url)
            .timeout(timeout)
            .json(&body);
        let secret = model
            .auth_env_var
            .as_ref()
            .and_then(|v| self.credentials.get(v));
        req = match (model.schema, secret) {
            (ApiSchema::Anthropic, Some(key)) => req
                .header("x-api-key", key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            (ApiSchema::Anthropic, None) => req.header("anthropic-version", ANTHROPIC_VERSION),
            (_, Some(key)) => req.bearer_auth(key),
            (_, None) => req,
        };

        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => {
                let kind = if e.is_timeout() { "timeout" } else { "network error" };
                return RawResponse::error(ProviderStatus::RetryableError, format!("{kind}: {e}"), elapsed());
            }
        };
        let code = resp.status().as_u16();
        let bytes = match resp.bytes().await {
            Ok(b) => b,
            Err(e) => {
                return RawResponse::error(
                    ProviderStatus::RetryableError,
                    format!("reading body: {e}"),
                    elapsed(),
                )
            }
        };
        let latency_ms = elapsed();
        let lossy = String::from_utf8_lossy(&bytes);
        let status = classify_http_status(code);
        if status != ProviderStatus::Success {
            return RawResponse::error(status, format!("HTTP {code}: {}", excerpt(&lossy)), latency_ms);
        }
        let payload: Value = match serde_json::from_str(&lossy) {
            Ok(v) => v,
            Err(e) => {
                return RawResponse::error(
                    ProviderStatus::FatalError,
                    format!("malformed payload ({e}): {}", excerpt(&lossy)),
                    latency_ms,
                )
            }
        };
        match extract(model.schema, &payload) {
            Ok((text, _)) if text.trim().is_empty() => RawResponse::error(
                ProviderStatus::FatalError,
                format!("empty completion: {}", excerpt(&lossy)),
                latency_ms,
            ),
            Ok((text, usage)) => {
                let mut detail = None;
                if text.contains('\u{FFFD}') && matches!(lossy, std::borrow::Cow::Owned(_)) {
                    detail = Some("invalid UTF-8 in payload replaced with U+FFFD".to_string());
                }
                let (pt, ct) = usage.unwrap_or((0, 0));
                RawResponse {
                    text,
                    prompt_tokens: pt,
                    completion_tokens: ct,
                    usage_missing: usage.is_none(),
                    latency_ms,
                    attempt_count: 1,
                    provider_status: ProviderStatus::Success,
                    error_detail: detail,
                }
            }
            Err(why) => RawResponse::error(
                ProviderStatus::FatalError,
                format!("malformed payload ({why}): {}", excerpt(&lossy)),
                latency_ms,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openai_payload() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "5 - fine"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        assert_eq!(
            extract(ApiSchema::Openai, &body).unwrap(),
            ("5 - fine".to_string(), Some((12, 3)))
        );
    }

    #[test]
    fn anthropic_payload_without_usage() {
        let body = json!({"content": [{"type": "text", "text": "2"}, {"type": "text", "text": " - no"}]});
        assert_eq!(
            extract(ApiSchema::Anthropic, &body).unwrap(),
            ("2 - no".to_string(), None)
        );
    }

    #[test]
    fn malformed_payload() {
        assert!(extract(ApiSchema::Openai, &json!({"oops": 1})).is_err());
    }
}
