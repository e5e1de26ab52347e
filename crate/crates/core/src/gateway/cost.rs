use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, RawResponse};
use crate::error::{Error, Result};
use crate::storage::{read_yaml, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    pub provider_id: String,
    pub model_name: String,
    pub input_usd_per_1k_tokens: f64,
    pub output_usd_per_1k_tokens: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceSheet {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub prices: Vec<PriceEntry>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

impl PriceSheet {
    pub fn load(path: &Path) -> Result<Self> {
        let sheet: PriceSheet = read_yaml(path)?;
        for p in &sheet.prices {
            let rates = [p.input_usd_per_1k_tokens, p.output_usd_per_1k_tokens];
            if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
                return Err(Error::Schema(format!(
                    "{}: negative or non-finite rate for {}/{}",
                    path.display(),
                    p.provider_id,
                    p.model_name
                )));
            }
        }
        Ok(sheet)
    }

    pub fn lookup(&self, provider_id: &str, model_name: &str) -> Option<&PriceEntry> {
        self.prices
            .iter()
            .find(|p| p.provider_id == provider_id && p.model_name == model_name)
    }

    pub fn cost_of(entry: &PriceEntry, prompt_tokens: f64, completion_tokens: f64) -> f64 {
        prompt_tokens / 1000.0 * entry.input_usd_per_1k_tokens
            + completion_tokens / 1000.0 * entry.output_usd_per_1k_tokens
    }
}

/// USD cost of one response, or `None` when it cannot be known (no price
/// entry, or the provider omitted usage). Unknown is never reported as zero.
pub fn record_cost(resp: &RawResponse, model: &ModelSpec, prices: &PriceSheet) -> Option<f64> {
    if resp.usage_missing {
        return None;
    }
    let entry = prices.lookup(&model.provider_id, &model.model_name)?;
    Some(PriceSheet::cost_of(
        entry,
        resp.prompt_tokens as f64,
        resp.completion_tokens as f64,
    ))
}
