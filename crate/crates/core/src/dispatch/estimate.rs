use serde::{Deserialize, Serialize};

use super::{JobRecord, JobStatus, RunManifest};
use crate::gateway::PriceSheet;

/// Output tokens assumed for the low bound.
pub const MIN_OUTPUT_TOKENS: u32 = 16;
/// Characters per token in the input heuristic.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub provider_id: String,
    pub model_name: String,
    pub jobs: usize,
    pub expected_input_tokens: u64,
    pub output_tokens_low: u64,
    pub output_tokens_high: u64,
    /// `None` when the price sheet has no entry for this model.
    pub low_usd: Option<f64>,
    pub high_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub run_id: String,
    pub jobs: usize,
    pub models: Vec<ModelEstimate>,
    /// Totals over models with known prices.
    pub total_low_usd: f64,
    pub total_high_usd: f64,
    pub unknown_price_models: Vec<String>,
}

pub fn input_tokens_for(prompt_chars: usize) -> u64 {
    prompt_chars.div_ceil(CHARS_PER_TOKEN) as u64
}

fn estimate_jobs<'a>(
    manifest: &RunManifest,
    jobs: impl Iterator<Item = &'a JobRecord> + Clone,
    prices: &PriceSheet,
) -> CostEstimate {
    let mut models = Vec::new();
    let mut total_jobs = 0;
    let (mut low, mut high) = (0.0, 0.0);
    let mut unknown = Vec::new();
    for m in &manifest.config.models {
        let mine = jobs
            .clone()
            .filter(|j| j.key.provider_id == m.provider_id && j.key.model_name == m.model_name);
        let mut n = 0usize;
        let mut input = 0u64;
        for j in mine {
            n += 1;
            input += input_tokens_for(j.prompt.char_length);
        }
        total_jobs += n;
        let out_low = n as u64 * MIN_OUTPUT_TOKENS.min(m.max_output_tokens) as u64;
        let out_high = n as u64 * m.max_output_tokens as u64;
        let (lo, hi) = match prices.lookup(&m.provider_id, &m.model_name) {
            Some(p) => {
                let lo = PriceSheet::cost_of(p, input as f64, out_low as f64);
                let hi = PriceSheet::cost_of(p, input as f64, out_high as f64);
                low += lo;
                high += hi;
                (Some(lo), Some(hi))
            }
            None => {
                unknown.push(format!("{}/{}", m.provider_id, m.model_name));
                (None, None)
            }
        };
        models.push(ModelEstimate {
            provider_id: m.provider_id.clone(),
            model_name: m.model_name.clone(),
            jobs: n,
            expected_input_tokens: input,
            output_tokens_low: out_low,
            output_tokens_high: out_high,
            low_usd: lo,
            high_usd: hi,
        });
    }
    CostEstimate {
        run_id: manifest.run_id.clone(),
        jobs: total_jobs,
        models,
        total_low_usd: low,
        total_high_usd: high,
        unknown_price_models: unknown,
    }
}

/// Low/high cost bounds for every job in the manifest: input tokens are
/// `ceil(prompt_chars / 4)`, output is bounded by `[16, max_output_tokens]`.
pub fn estimate_cost(manifest: &RunManifest, prices: &PriceSheet) -> CostEstimate {
    estimate_jobs(manifest, manifest.jobs.iter(), prices)
}

/// Same bounds restricted to jobs that have not yet succeeded.
pub fn estimate_remaining(manifest: &RunManifest, prices: &PriceSheet) -> CostEstimate {
    estimate_jobs(
        manifest,
        manifest.jobs.iter().filter(|j| j.status != JobStatus::Succeeded),
        prices,
    )
}
