//! Descriptive statistics and comparisons over scored export rows.
//!
//! Two granularities are computed. Item cells pool every keyed item score of
//! a (model, persona, scale or subscale, temperature) cell. Scale cells hold
//! one value per repeat: the mean keyed score of that repeat's items, so
//! their spread measures run-to-run variation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::storage::responses::ResponsesRow;

pub mod compare;
pub mod stats;
pub mod ttest;

pub use compare::{
    compare_temperatures, compare_to_benchmark, deviation, load_benchmark, persona_deltas, range_profile,
    BenchmarkComparison, BenchmarkDeviation, BenchmarkRow, ModelMean, PersonaDelta, RangeProfile,
    TemperatureComparison,
};
pub use stats::{summarize, summarize_with_failures, AggregateStat, Welford};
pub use ttest::{welch_t, TestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub model_name: String,
    pub persona_id: String,
    pub scale_id: String,
    /// `None` for the whole scale.
    pub subscale_id: Option<String>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisCell {
    pub key: CellKey,
    pub values: Vec<f64>,
    /// Rows (item cells) or repeats (scale cells) without a usable score.
    pub n_failed: usize,
}

impl AnalysisCell {
    pub fn summarize(&self) -> Option<AggregateStat> {
        summarize_with_failures(&self.values, self.n_failed).ok()
    }
}

/// Ranks by first appearance in the rows; this is the declaration order for
/// exports written in plan order.
#[derive(Debug, Default)]
pub struct Order {
    models: HashMap<String, usize>,
    personas: HashMap<String, usize>,
    scales: HashMap<String, usize>,
    subscales: HashMap<String, usize>,
    pub persona_list: Vec<String>,
    pub model_list: Vec<String>,
}

fn rank(map: &mut HashMap<String, usize>, id: &str) -> usize {
    let next = map.len();
    *map.entry(id.to_string()).or_insert(next)
}

impl Order {
    pub fn from_rows(rows: &[ResponsesRow]) -> Self {
        let mut o = Order::default();
        for r in rows {
            if !o.models.contains_key(&r.model_name) {
                o.model_list.push(r.model_name.clone());
            }
            if !o.personas.contains_key(&r.persona_id) {
                o.persona_list.push(r.persona_id.clone());
            }
            rank(&mut o.models, &r.model_name);
            rank(&mut o.personas, &r.persona_id);
            rank(&mut o.scales, &r.scale_id);
            if let Some(s) = &r.subscale_id {
                rank(&mut o.subscales, s);
            }
        }
        o
    }

    pub fn persona_rank(&self, id: &str) -> usize {
        self.personas.get(id).copied().unwrap_or(usize::MAX)
    }

    /// Sort key: model, scale, subscale (whole scale first), persona, temperature.
    pub fn sort_key(&self, k: &CellKey) -> SortKey {
        (
            self.models[&k.model_name],
            self.scales[&k.scale_id],
            k.subscale_id.as_ref().map_or(0, |s| self.subscales[s] + 1),
            self.personas[&k.persona_id],
            k.temperature.to_bits(),
        )
    }
}

pub type SortKey = (usize, usize, usize, usize, u64);

fn targets(r: &ResponsesRow) -> impl Iterator<Item = Option<String>> + '_ {
    std::iter::once(None).chain(r.subscale_id.iter().map(|s| Some(s.clone())))
}

fn key_for(r: &ResponsesRow, subscale: Option<String>) -> CellKey {
    CellKey {
        model_name: r.model_name.clone(),
        persona_id: r.persona_id.clone(),
        scale_id: r.scale_id.clone(),
        subscale_id: subscale,
        temperature: r.temperature,
    }
}

/// Pooled keyed item scores per cell, in [`Order::sort_key`] order.
pub fn item_cells(rows: &[ResponsesRow], order: &Order) -> Vec<AnalysisCell> {
    let mut cells: BTreeMap<SortKey, AnalysisCell> = BTreeMap::new();
    for r in rows {
        for sub in targets(r) {
            let key = key_for(r, sub);
            let cell = cells.entry(order.sort_key(&key)).or_insert_with(|| AnalysisCell {
                key,
                values: Vec::new(),
                n_failed: 0,
            });
            match r.keyed_score {
                Some(s) => cell.values.push(s as f64),
                None => cell.n_failed += 1,
            }
        }
    }
    cells.into_values().collect()
}

/// Per-repeat (sum, count) of keyed scores.
type RepeatSums = BTreeMap<u32, (f64, usize)>;

/// One value per repeat: the mean keyed item score of that repeat.
pub fn scale_cells(rows: &[ResponsesRow], order: &Order) -> Vec<AnalysisCell> {
    let mut acc: BTreeMap<SortKey, (CellKey, RepeatSums)> = BTreeMap::new();
    for r in rows {
        for sub in targets(r) {
            let key = key_for(r, sub);
            let entry = acc
                .entry(order.sort_key(&key))
                .or_insert_with(|| (key, BTreeMap::new()));
            let rep = entry.1.entry(r.repeat_index).or_insert((0.0, 0));
            if let Some(s) = r.keyed_score {
                rep.0 += s as f64;
                rep.1 += 1;
            }
        }
    }
    acc.into_values()
        .map(|(key, reps)| {
            let mut values = Vec::new();
            let mut n_failed = 0;
            for (sum, n) in reps.into_values() {
                if n > 0 {
                    values.push(sum / n as f64);
                } else {
                    n_failed += 1;
                }
            }
            AnalysisCell { key, values, n_failed }
        })
        .collect()
}
