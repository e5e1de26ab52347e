//! The analysis export. Rebuilding it from the same rows yields the same bytes:
//! ordering follows first appearance in the rows and every float is written
//! with six decimals.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use super::responses::ResponsesRow;
use super::SCHEMA_VERSION;
use crate::analysis::{
    compare_temperatures, compare_to_benchmark, item_cells, persona_deltas, range_profile, scale_cells,
    AggregateStat, AnalysisCell, BenchmarkComparison, BenchmarkRow, CellKey, ModelMean, Order, PersonaDelta,
    RangeProfile, TemperatureComparison,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_ids: Vec<String>,
    pub rows: usize,
    pub scored_rows: usize,
    pub unscored_rows: usize,
    pub models: Vec<String>,
    pub personas: Vec<String>,
    pub scales: Vec<String>,
    pub temperatures: Vec<f64>,
    pub total_cost_usd: f64,
    pub unknown_cost_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    #[serde(flatten)]
    pub stat: AggregateStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaGroup {
    pub model_name: String,
    pub scale_id: String,
    pub subscale_id: Option<String>,
    pub temperature: f64,
    pub baseline_id: String,
    pub baseline_mean: f64,
    pub deltas: Vec<PersonaDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub model_name: String,
    pub scale_id: String,
    pub subscale_id: Option<String>,
    pub temperature: f64,
    #[serde(flatten)]
    pub profile: RangeProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureEntry {
    pub model_name: String,
    pub persona_id: String,
    pub scale_id: String,
    pub subscale_id: Option<String>,
    #[serde(flatten)]
    pub comparison: TemperatureComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub baseline_persona: String,
    /// Pooled item-level statistics.
    pub item_cells: Vec<CellSummary>,
    /// Statistics over per-repeat scale means.
    pub scale_cells: Vec<CellSummary>,
    pub persona_deltas: Vec<DeltaGroup>,
    pub range_profiles: Vec<RangeEntry>,
    pub temperature_comparisons: Vec<TemperatureEntry>,
    pub benchmark: Option<BenchmarkComparison>,
}

fn summaries(cells: Vec<AnalysisCell>) -> Vec<CellSummary> {
    cells
        .into_iter()
        .filter_map(|c| {
            let stat = c.summarize()?;
            Some(CellSummary { key: c.key, stat })
        })
        .collect()
}

type GroupKey = (usize, usize, usize, u64);
type PersonaMeans<'a> = (&'a CellKey, Vec<(String, f64)>);
type TemperatureStats<'a> = (&'a CellKey, Vec<(f64, &'a AggregateStat)>);

/// Compute every analysis output from export rows alone.
///
/// `baseline` defaults to the first persona in the rows.
pub fn build_summary(
    rows: &[ResponsesRow],
    baseline: Option<&str>,
    benchmark: Option<&[BenchmarkRow]>,
) -> Result<SummaryDocument> {
    if rows.is_empty() {
        return Err(Error::Stats("the export has no rows".into()));
    }
    let order = Order::from_rows(rows);
    let baseline_persona = match baseline {
        Some(b) if order.persona_list.iter().any(|p| p == b) => b.to_string(),
        Some(b) => return Err(Error::Stats(format!("baseline persona `{b}` does not occur in the export"))),
        None => order.persona_list[0].clone(),
    };

    let mut run_ids: Vec<String> = Vec::new();
    let mut scales: Vec<String> = Vec::new();
    let mut temperatures: Vec<f64> = Vec::new();
    let mut total_cost_usd = 0.0;
    let mut unknown_cost_rows = 0;
    for r in rows {
        if !run_ids.contains(&r.run_id) {
            run_ids.push(r.run_id.clone());
        }
        if !scales.contains(&r.scale_id) {
            scales.push(r.scale_id.clone());
        }
        if !temperatures.contains(&r.temperature) {
            temperatures.push(r.temperature);
        }
        match r.cost_usd {
            Some(c) => total_cost_usd += c,
            None => unknown_cost_rows += 1,
        }
    }
    temperatures.sort_by(f64::total_cmp);
    let scored_rows = rows.iter().filter(|r| r.keyed_score.is_some()).count();
    let metadata = RunMetadata {
        run_ids,
        rows: rows.len(),
        scored_rows,
        unscored_rows: rows.len() - scored_rows,
        models: order.model_list.clone(),
        personas: order.persona_list.clone(),
        scales,
        temperatures,
        total_cost_usd,
        unknown_cost_rows,
    };

    let item_cells = summaries(item_cells(rows, &order));
    let scale_cells = summaries(scale_cells(rows, &order));

    // persona means per (model, scale, subscale, temperature)
    let mut by_group: BTreeMap<GroupKey, PersonaMeans> = BTreeMap::new();
    // stats per temperature for each (model, scale, subscale, persona)
    let mut by_temp: BTreeMap<GroupKey, TemperatureStats> = BTreeMap::new();
    for c in &item_cells {
        let (m, s, sub, p, t) = order.sort_key(&c.key);
        by_group
            .entry((m, s, sub, t))
            .or_insert_with(|| (&c.key, Vec::new()))
            .1
            .push((c.key.persona_id.clone(), c.stat.mean));
        by_temp
            .entry((m, s, sub, p as u64))
            .or_insert_with(|| (&c.key, Vec::new()))
            .1
            .push((c.key.temperature, &c.stat));
    }

    let mut deltas = Vec::new();
    let mut ranges = Vec::new();
    for (key, means) in by_group.values_mut() {
        means.sort_by_key(|(p, _)| order.persona_rank(p));
        if let Some(&(_, base_mean)) = means.iter().find(|(p, _)| *p == baseline_persona) {
            let d = persona_deltas(means, &baseline_persona)?;
            if !d.is_empty() {
                deltas.push(DeltaGroup {
                    model_name: key.model_name.clone(),
                    scale_id: key.scale_id.clone(),
                    subscale_id: key.subscale_id.clone(),
                    temperature: key.temperature,
                    baseline_id: baseline_persona.clone(),
                    baseline_mean: base_mean,
                    deltas: d,
                });
            }
        }
        if means.len() >= 2 {
            ranges.push(RangeEntry {
                model_name: key.model_name.clone(),
                scale_id: key.scale_id.clone(),
                subscale_id: key.subscale_id.clone(),
                temperature: key.temperature,
                profile: range_profile(means)?,
            });
        }
    }

    let mut temps = Vec::new();
    for (key, stats) in by_temp.values_mut() {
        stats.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (low_t, low) = stats[0];
        for &(high_t, high) in &stats[1..] {
            temps.push(TemperatureEntry {
                model_name: key.model_name.clone(),
                persona_id: key.persona_id.clone(),
                scale_id: key.scale_id.clone(),
                subscale_id: key.subscale_id.clone(),
                comparison: compare_temperatures(low_t, low, high_t, high),
            });
        }
    }

    let benchmark = benchmark.map(|bench| {
        let model: Vec<ModelMean> = item_cells
            .iter()
            .map(|c| ModelMean {
                model_name: c.key.model_name.clone(),
                persona_id: c.key.persona_id.clone(),
                scale_id: c.key.scale_id.clone(),
                subscale_id: c.key.subscale_id.clone(),
                temperature: c.key.temperature,
                mean: c.stat.mean,
            })
            .collect();
        compare_to_benchmark(&model, bench)
    });

    Ok(SummaryDocument {
        schema_version: SCHEMA_VERSION,
        metadata,
        baseline_persona,
        item_cells,
        scale_cells,
        persona_deltas: deltas,
        range_profiles: ranges,
        temperature_comparisons: temps,
        benchmark,
    })
}

/// Every float printed to six decimals; non-finite values become null.
struct FixedFloat<F>(F);

fn write_fixed<W: ?Sized + io::Write>(w: &mut W, v: f64) -> io::Result<()> {
    if !v.is_finite() {
        return w.write_all(b"null");
    }
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        w.write_all(b"0.000000")
    } else {
        w.write_all(s.as_bytes())
    }
}

impl<F: Formatter> Formatter for FixedFloat<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write_fixed(w, v)
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write_fixed(w, v as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn fixed_bytes<T: Serialize, F: Formatter>(value: &T, formatter: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(formatter));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Export(e.to_string()))?;
    Ok(buf)
}

/// Pretty JSON, newline-terminated, floats at six decimals.
pub fn to_fixed_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = fixed_bytes(value, PrettyFormatter::new())?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Single-line form of [`to_fixed_json`].
pub fn to_fixed_json_line<T: Serialize>(value: &T) -> Result<String> {
    let buf = fixed_bytes(value, CompactFormatter)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn summary_to_string(doc: &SummaryDocument) -> Result<String> {
    to_fixed_json(doc)
}

pub fn write_summary(doc: &SummaryDocument, path: &Path) -> Result<()> {
    std::fs::write(path, summary_to_string(doc)?).map_err(|e| Error::io(path, e))
}
