//! Psychometric instruments: response scales, items, keying, and scoring.
//!
//! Scales are data. A bundle file declares one or more [`ScaleDefinition`]s;
//! loading validates every invariant and reports all violations at once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::{ParseStatus, ParsedResponse};
use crate::storage::{read_yaml, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLabel {
    pub score: i32,
    pub label: String,
}

/// A bounded integer response format, e.g. 1 (strongly disagree) .. 7 (strongly agree).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub min: i32,
    pub max: i32,
    pub labels: Vec<ScaleLabel>,
}

impl ResponseScale {
    /// The seven-point agreement scale used throughout the persona study.
    pub fn agreement_7() -> Self {
        let labels = [
            "strongly disagree",
            "disagree",
            "slightly disagree",
            "neutral",
            "slightly agree",
            "agree",
            "strongly agree",
        ];
        ResponseScale {
            min: 1,
            max: 7,
            labels: labels
                .iter()
                .enumerate()
                .map(|(i, l)| ScaleLabel {
                    score: i as i32 + 1,
                    label: l.to_string(),
                })
                .collect(),
        }
    }

    pub fn contains(&self, score: i32) -> bool {
        (self.min..=self.max).contains(&score)
    }

    pub fn midpoint(&self) -> f64 {
        (self.min as f64 + self.max as f64) / 2.0
    }

    pub fn label_for(&self, score: i32) -> Option<&str> {
        self.labels
            .iter()
            .find(|l| l.score == score)
            .map(|l| l.label.as_str())
    }

    /// Labels sorted by score.
    pub fn ordered_labels(&self) -> Vec<&ScaleLabel> {
        let mut out: Vec<_> = self.labels.iter().collect();
        out.sort_by_key(|l| l.score);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleItem {
    pub item_id: String,
    pub index: u32,
    pub text: String,
    #[serde(default)]
    pub reverse_scored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscale_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscale {
    pub subscale_id: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleDefinition {
    pub scale_id: String,
    pub name: String,
    /// Declared item count; checked against `items` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default)]
    pub scoring_rule: ScoringRule,
    pub response_scale: ResponseScale,
    #[serde(default)]
    pub subscales: Vec<Subscale>,
    pub items: Vec<ScaleItem>,
}

impl ScaleDefinition {
    pub fn item(&self, item_id: &str) -> Option<&ScaleItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Items in administration order (by 1-based index).
    pub fn ordered_items(&self) -> Vec<&ScaleItem> {
        let mut out: Vec<_> = self.items.iter().collect();
        out.sort_by_key(|i| i.index);
        out
    }
}

/// Stable identifiers for every rule checked by [`validate_scale`] and the
/// persona and run-config validators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ScaleBounds,
    LabelCoverage,
    LabelDuplicate,
    ItemDuplicateId,
    ItemIndexGap,
    ItemEmptyText,
    ItemUnknownSubscale,
    ItemCount,
    ScaleDuplicateId,
    PersonaDuplicateId,
    PersonaMultipleBaselines,
    PersonaEmptyBundle,
    ConfigUnresolvedId,
    ConfigInvalidValue,
    ConfigEmptyPlan,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ScaleBounds => "scale.bounds",
            Rule::LabelCoverage => "scale.label_coverage",
            Rule::LabelDuplicate => "scale.label_duplicate",
            Rule::ItemDuplicateId => "item.duplicate_id",
            Rule::ItemIndexGap => "item.index_gap",
            Rule::ItemEmptyText => "item.empty_text",
            Rule::ItemUnknownSubscale => "item.unknown_subscale",
            Rule::ItemCount => "scale.item_count",
            Rule::ScaleDuplicateId => "bundle.duplicate_scale_id",
            Rule::PersonaDuplicateId => "persona.duplicate_id",
            Rule::PersonaMultipleBaselines => "persona.multiple_baselines",
            Rule::PersonaEmptyBundle => "persona.empty_bundle",
            Rule::ConfigUnresolvedId => "config.unresolved_id",
            Rule::ConfigInvalidValue => "config.invalid_value",
            Rule::ConfigEmptyPlan => "config.empty_plan",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken invariant. `subject` names the scale, persona bundle, or config
/// the violation belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub rule: Rule,
    pub message: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, rule: Rule, message: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            rule,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.subject, self.message)
    }
}

pub(crate) fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn validate_response_scale(subject: &str, scale: &ResponseScale) -> Vec<Violation> {
    let mut out = Vec::new();
    if scale.min >= scale.max {
        out.push(Violation::new(
            subject,
            Rule::ScaleBounds,
            format!("min ({}) must be below max ({})", scale.min, scale.max),
        ));
        return out;
    }
    let mut seen: HashMap<i32, usize> = HashMap::new();
    for l in &scale.labels {
        if !scale.contains(l.score) {
            out.push(Violation::new(
                subject,
                Rule::LabelCoverage,
                format!("label `{}` has score {} outside [{}, {}]", l.label, l.score, scale.min, scale.max),
            ));
        }
        *seen.entry(l.score).or_default() += 1;
    }
    for score in scale.min..=scale.max {
        match seen.get(&score).copied().unwrap_or(0) {
            0 => out.push(Violation::new(
                subject,
                Rule::LabelCoverage,
                format!("score {score} has no label"),
            )),
            1 => {}
            n => out.push(Violation::new(
                subject,
                Rule::LabelCoverage,
                format!("score {score} labelled {n} times"),
            )),
        }
    }
    let mut names: HashMap<String, i32> = HashMap::new();
    for l in &scale.labels {
        let norm = normalize_label(&l.label);
        if norm.is_empty() {
            out.push(Violation::new(
                subject,
                Rule::LabelDuplicate,
                format!("score {} has an empty label", l.score),
            ));
            continue;
        }
        if let Some(prev) = names.insert(norm, l.score) {
            out.push(Violation::new(
                subject,
                Rule::LabelDuplicate,
                format!("label `{}` repeats between scores {prev} and {}", l.label, l.score),
            ));
        }
    }
    out
}

/// Every invariant violation of `scale`; an empty list means the scale is valid.
pub fn validate_scale(scale: &ScaleDefinition) -> Vec<Violation> {
    let subject = scale.scale_id.as_str();
    let mut out = validate_response_scale(subject, &scale.response_scale);

    let mut by_id: HashMap<&str, u32> = HashMap::new();
    for item in &scale.items {
        if let Some(prev) = by_id.insert(item.item_id.as_str(), item.index) {
            out.push(Violation::new(
                subject,
                Rule::ItemDuplicateId,
                format!(
                    "item_id `{}` used at indices {prev} and {}",
                    item.item_id, item.index
                ),
            ));
        }
        if item.text.trim().is_empty() {
            out.push(Violation::new(
                subject,
                Rule::ItemEmptyText,
                format!("item `{}` has empty text", item.item_id),
            ));
        }
    }

    let mut indices: Vec<u32> = scale.items.iter().map(|i| i.index).collect();
    indices.sort_unstable();
    let expected: Vec<u32> = (1..=scale.items.len() as u32).collect();
    if indices != expected {
        let present: HashSet<u32> = indices.iter().copied().collect();
        let max = indices.last().copied().unwrap_or(0).max(scale.items.len() as u32);
        let missing: Vec<String> = (1..=max)
            .filter(|i| !present.contains(i))
            .map(|i| i.to_string())
            .collect();
        let mut dupes: Vec<u32> = indices.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
        dupes.dedup();
        let mut msg = format!(
            "item indices must form 1..{} without gaps",
            scale.items.len()
        );
        if !missing.is_empty() {
            msg.push_str(&format!("; missing index {}", missing.join(", ")));
        }
        if !dupes.is_empty() {
            msg.push_str(&format!("; repeated index {dupes:?}"));
        }
        if indices.first() == Some(&0) {
            msg.push_str("; index 0 is not allowed");
        }
        out.push(Violation::new(subject, Rule::ItemIndexGap, msg));
    }

    let declared: HashSet<&str> = scale
        .subscales
        .iter()
        .map(|s| s.subscale_id.as_str())
        .collect();
    for item in &scale.items {
        if let Some(sub) = &item.subscale_id {
            if !declared.contains(sub.as_str()) {
                out.push(Violation::new(
                    subject,
                    Rule::ItemUnknownSubscale,
                    format!(
                        "item `{}` references undeclared subscale `{sub}`",
                        item.item_id
                    ),
                ));
            }
        }
    }

    if let Some(len) = scale.length {
        if len != scale.items.len() {
            out.push(Violation::new(
                subject,
                Rule::ItemCount,
                format!("declared length {len} but {} items present", scale.items.len()),
            ));
        }
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleBundleFile {
    #[serde(default = "default_schema")]
    schema_version: u32,
    scales: Vec<ScaleDefinition>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Load and validate every scale declared in a bundle file, preserving order.
pub fn load_scale_bundle(path: &Path) -> Result<Vec<ScaleDefinition>> {
    let bundle: ScaleBundleFile = read_yaml(path)?;
    if bundle.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            bundle.schema_version
        )));
    }
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    for scale in &bundle.scales {
        if !ids.insert(scale.scale_id.clone()) {
            violations.push(Violation::new(
                &scale.scale_id,
                Rule::ScaleDuplicateId,
                "scale_id declared twice in bundle",
            ));
        }
        violations.extend(validate_scale(scale));
    }
    if violations.is_empty() {
        Ok(bundle.scales)
    } else {
        Err(Error::Invalid(violations))
    }
}

/// Load several bundles and concatenate them, rejecting scale ids repeated across files.
pub fn load_scale_bundles<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ScaleDefinition>> {
    let mut all: Vec<ScaleDefinition> = Vec::new();
    for p in paths {
        for scale in load_scale_bundle(p.as_ref())? {
            if all.iter().any(|s| s.scale_id == scale.scale_id) {
                return Err(Error::Invalid(vec![Violation::new(
                    &scale.scale_id,
                    Rule::ScaleDuplicateId,
                    format!("scale_id also declared in {}", p.as_ref().display()),
                )]));
            }
            all.push(scale);
        }
    }
    Ok(all)
}

/// Mirror a raw score onto the opposite end of the scale: `min + max - raw`.
pub fn reverse_code(raw: i32, scale: &ResponseScale) -> Result<i32> {
    if !scale.contains(raw) {
        return Err(Error::OutOfRange {
            raw,
            min: scale.min,
            max: scale.max,
        });
    }
    Ok(scale.min + scale.max - raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub raw: Option<i32>,
    pub keyed: Option<i32>,
    pub parse_status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleScore {
    pub scale_id: String,
    /// `None` when no item was scored.
    pub total: Option<f64>,
    pub per_subscale: BTreeMap<String, f64>,
    pub n_scored: usize,
    pub n_failed: usize,
}

fn aggregate(rule: ScoringRule, values: &[i32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let sum: i64 = values.iter().map(|&v| v as i64).sum();
    Some(match rule {
        ScoringRule::Sum => sum as f64,
        ScoringRule::Mean => sum as f64 / values.len() as f64,
    })
}

/// Key parsed responses and aggregate them under the scale's scoring rule.
///
/// Failed parses carry no score, are left out of the totals, and are counted
/// in `n_failed`. Items with no supplied response are simply absent.
pub fn score_items(
    parsed: &[(String, ParsedResponse)],
    scale: &ScaleDefinition,
) -> Result<(Vec<ItemScore>, ScaleScore)> {
    let rs = &scale.response_scale;
    let mut seen = HashSet::new();
    let mut scores = Vec::with_capacity(parsed.len());
    let mut keyed_all = Vec::new();
    let mut keyed_by_sub: BTreeMap<&str, Vec<i32>> = BTreeMap::new();
    let mut n_failed = 0;

    for (item_id, resp) in parsed {
        let item = scale
            .item(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.clone(), scale.scale_id.clone()))?;
        if !seen.insert(item_id.as_str()) {
            return Err(Error::DuplicateItem(item_id.clone()));
        }
        match resp.score {
            Some(raw) if resp.parse_status != ParseStatus::Failed => {
                let keyed = if item.reverse_scored {
                    reverse_code(raw, rs)?
                } else if rs.contains(raw) {
                    raw
                } else {
                    return Err(Error::OutOfRange {
                        raw,
                        min: rs.min,
                        max: rs.max,
                    });
                };
                keyed_all.push(keyed);
                if let Some(sub) = &item.subscale_id {
                    keyed_by_sub.entry(sub.as_str()).or_default().push(keyed);
                }
                scores.push(ItemScore {
                    item_id: item_id.clone(),
                    raw: Some(raw),
                    keyed: Some(keyed),
                    parse_status: resp.parse_status,
                });
            }
            _ => {
                n_failed += 1;
                scores.push(ItemScore {
                    item_id: item_id.clone(),
                    raw: None,
                    keyed: None,
                    parse_status: ParseStatus::Failed,
                });
            }
        }
    }

    let per_subscale = keyed_by_sub
        .into_iter()
        .filter_map(|(k, v)| aggregate(scale.scoring_rule, &v).map(|t| (k.to_string(), t)))
        .collect();
    let total = ScaleScore {
        scale_id: scale.scale_id.clone(),
        total: aggregate(scale.scoring_rule, &keyed_all),
        per_subscale,
        n_scored: keyed_all.len(),
        n_failed,
    };
    Ok((scores, total))
}
