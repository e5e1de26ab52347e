use std::path::{Path, PathBuf};

use stance_core::dispatch::{RunConfig, Study};
use stance_core::gateway::{ApiSchema, ModelSpec};
use stance_core::persona::Persona;
use stance_core::scale::{ResponseScale, ScaleDefinition, ScaleItem, ScoringRule};

pub fn workdir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn study(config: &str) -> Study {
    Study::load(&workdir(), Path::new(config)).unwrap()
}

pub fn scale(id: &str, n: u32) -> ScaleDefinition {
    ScaleDefinition {
        scale_id: id.into(),
        name: id.into(),
        length: Some(n as usize),
        scoring_rule: ScoringRule::Mean,
        response_scale: ResponseScale::agreement_7(),
        subscales: vec![],
        items: (1..=n)
            .map(|i| ScaleItem {
                item_id: format!("{id}-{i:03}"),
                index: i,
                text: format!("Test statement number {i}."),
                reverse_scored: i % 2 == 0,
                subscale_id: None,
            })
            .collect(),
    }
}

pub fn personas(ids: &[&str]) -> Vec<Persona> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| Persona {
            persona_id: id.to_string(),
            label: id.to_string(),
            preamble: if i == 0 { String::new() } else { format!("You speak as {id}.") },
            is_baseline: i == 0,
        })
        .collect()
}

pub fn mock_model(name: &str) -> ModelSpec {
    ModelSpec {
        provider_id: "mock".into(),
        model_name: name.into(),
        endpoint_url: String::new(),
        auth_env_var: None,
        max_output_tokens: 256,
        schema: ApiSchema::Mock,
    }
}

pub fn model_on(provider: &str, name: &str) -> ModelSpec {
    ModelSpec {
        provider_id: provider.into(),
        ..mock_model(name)
    }
}

/// One scale of `n` items, the given personas and models, temperature 0, one repeat, no rate pressure.
pub fn small_config(run_id: &str, n: u32, persona_ids: &[&str], models: Vec<ModelSpec>) -> (RunConfig, Vec<ScaleDefinition>, Vec<Persona>) {
    let mut cfg = RunConfig::new(run_id, &["s"], persona_ids, models);
    cfg.temperatures = vec![0.0];
    cfg.limits.default.rate_per_sec = 10_000.0;
    (cfg, vec![scale("s", n)], personas(persona_ids))
}
