//! Persona framings and prompt assembly.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scale::{ResponseScale, Rule, ScaleItem, Violation};
use crate::storage::{read_yaml, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub persona_id: String,
    pub label: String,
    /// Free text placed before the scale instructions. Empty for the minimal baseline.
    #[serde(default)]
    pub preamble: String,
    #[serde(default)]
    pub is_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub persona_id: String,
    pub item_id: String,
    pub char_length: usize,
}

impl PromptText {
    /// Checks the item text appears verbatim once and every `score (label)`
    /// entry of the scale appears once.
    pub fn check(&self, item: &ScaleItem, scale: &ResponseScale) -> Vec<String> {
        let mut problems = Vec::new();
        let n = self.text.matches(item.text.as_str()).count();
        if n != 1 {
            problems.push(format!("item text occurs {n} times"));
        }
        for l in &scale.labels {
            let entry = format!("{} ({})", l.score, l.label);
            let n = self.text.matches(entry.as_str()).count();
            if n != 1 {
                problems.push(format!("scale entry `{entry}` occurs {n} times"));
            }
        }
        problems
    }
}

pub fn validate_personas(subject: &str, personas: &[Persona]) -> Vec<Violation> {
    let mut out = Vec::new();
    if personas.is_empty() {
        out.push(Violation::new(
            subject,
            Rule::PersonaEmptyBundle,
            "no personas declared",
        ));
        return out;
    }
    let mut ids = HashSet::new();
    for p in personas {
        if !ids.insert(p.persona_id.as_str()) {
            out.push(Violation::new(
                subject,
                Rule::PersonaDuplicateId,
                format!("persona_id `{}` declared twice", p.persona_id),
            ));
        }
    }
    let baselines: Vec<&str> = personas
        .iter()
        .filter(|p| p.is_baseline)
        .map(|p| p.persona_id.as_str())
        .collect();
    if baselines.len() > 1 {
        out.push(Violation::new(
            subject,
            Rule::PersonaMultipleBaselines,
            format!("more than one baseline persona: {}", baselines.join(", ")),
        ));
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaBundleFile {
    #[serde(default = "default_schema")]
    schema_version: u32,
    #[serde(default)]
    personas: Vec<Persona>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

pub fn load_personas(path: &Path) -> Result<Vec<Persona>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bundle: PersonaBundleFile = if raw.trim().is_empty() {
        PersonaBundleFile {
            schema_version: SCHEMA_VERSION,
            personas: vec![],
        }
    } else {
        read_yaml(path)?
    };
    if bundle.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema_version {} is not supported",
            path.display(),
            bundle.schema_version
        )));
    }
    let violations = validate_personas(&path.display().to_string(), &bundle.personas);
    if violations.is_empty() {
        Ok(bundle.personas)
    } else {
        Err(Error::Invalid(violations))
    }
}

pub fn baseline(personas: &[Persona]) -> Option<&Persona> {
    personas.iter().find(|p| p.is_baseline)
}

fn enumerate_scale(scale: &ResponseScale) -> String {
    scale
        .ordered_labels()
        .iter()
        .map(|l| format!("{} ({})", l.score, l.label))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Build the exact prompt text sent for one (persona, item).
///
/// Without a preamble the instruction block reads "Please answer the following
/// question using this scale: ... Provide a single number and a brief
/// one-sentence justification."; with one, the preamble is followed by
/// "Answer using this scale: ... Provide a number and brief justification.".
/// The item statement follows after a blank line.
pub fn assemble_prompt(persona: &Persona, item: &ScaleItem, scale: &ResponseScale) -> PromptText {
    let scale_list = enumerate_scale(scale);
    let preamble = persona.preamble.trim();
    let mut text = if preamble.is_empty() {
        format!(
            "Please answer the following question using this scale: {scale_list}. \
             Provide a single number and a brief one-sentence justification."
        )
    } else {
        format!(
            "{preamble} Answer using this scale: {scale_list}. \
             Provide a number and brief justification."
        )
    };
    text.push_str("\n\nStatement: ");
    text.push_str(&item.text);
    PromptText {
        char_length: text.chars().count(),
        text,
        persona_id: persona.persona_id.clone(),
        item_id: item.item_id.clone(),
    }
}
