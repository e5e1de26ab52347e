//! The flat per-job export, in CSV or JSON-lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use crate::dispatch::RunManifest;
use crate::error::{Error, Result};
use crate::parser::ParseStatus;

/// Export columns, in file order.
pub const COLUMNS: [&str; 23] = [
    "run_id",
    "scale_id",
    "item_id",
    "item_index",
    "subscale_id",
    "reverse_scored",
    "persona_id",
    "provider_id",
    "model_name",
    "temperature",
    "repeat_index",
    "raw_text",
    "parsed_score",
    "keyed_score",
    "parse_status",
    "justification",
    "prompt_tokens",
    "completion_tokens",
    "cost_usd",
    "attempt_count",
    "latency_ms",
    "timestamp_utc",
    "error_detail",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsesRow {
    pub run_id: String,
    pub scale_id: String,
    pub item_id: String,
    pub item_index: u32,
    pub subscale_id: Option<String>,
    pub reverse_scored: bool,
    pub persona_id: String,
    pub provider_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub repeat_index: u32,
    pub raw_text: String,
    pub parsed_score: Option<i32>,
    pub keyed_score: Option<i32>,
    pub parse_status: Option<ParseStatus>,
    pub justification: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: Option<f64>,
    pub attempt_count: u32,
    pub latency_ms: u64,
    pub timestamp_utc: String,
    pub error_detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    JsonLines,
}

impl ExportFormat {
    /// `.jsonl` and `.json` select JSON-lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => ExportFormat::JsonLines,
            _ => ExportFormat::Csv,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            ExportFormat::Csv => "responses.csv",
            ExportFormat::JsonLines => "responses.jsonl",
        }
    }
}

/// One row per terminal job, in manifest order.
pub fn rows_from_manifest(manifest: &RunManifest) -> Vec<ResponsesRow> {
    manifest
        .jobs
        .iter()
        .filter_map(|j| {
            let o = j.outcome.as_ref()?;
            Some(ResponsesRow {
                run_id: j.key.run_id.clone(),
                scale_id: j.key.scale_id.clone(),
                item_id: j.key.item_id.clone(),
                item_index: j.item_index,
                subscale_id: j.subscale_id.clone(),
                reverse_scored: j.reverse_scored,
                persona_id: j.key.persona_id.clone(),
                provider_id: j.key.provider_id.clone(),
                model_name: j.key.model_name.clone(),
                temperature: j.key.temperature,
                repeat_index: j.key.repeat_index,
                raw_text: o.raw_text.clone(),
                parsed_score: o.parsed_score,
                keyed_score: o.keyed_score,
                parse_status: o.parse_status,
                justification: o.justification.clone(),
                prompt_tokens: o.prompt_tokens,
                completion_tokens: o.completion_tokens,
                cost_usd: o.cost_usd,
                attempt_count: o.attempt_count,
                latency_ms: o.latency_ms,
                timestamp_utc: o.completed_utc.to_rfc3339_opts(SecondsFormat::Millis, true),
                error_detail: o.error_detail.clone(),
            })
        })
        .collect()
}

pub fn write_responses(rows: &[ResponsesRow], path: &Path, format: ExportFormat) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_responses_to(rows, BufWriter::new(file), format).map_err(|e| match e {
        Error::Export(m) => Error::Export(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_responses_to<W: Write>(rows: &[ResponsesRow], out: W, format: ExportFormat) -> Result<usize> {
    let export = |e: &dyn std::fmt::Display| Error::Export(e.to_string());
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .terminator(csv::Terminator::CRLF)
                .from_writer(out);
            w.write_record(COLUMNS).map_err(|e| export(&e))?;
            for r in rows {
                w.serialize(r).map_err(|e| export(&e))?;
            }
            w.flush().map_err(|e| export(&e))?;
        }
        ExportFormat::JsonLines => {
            let mut out = out;
            for r in rows {
                serde_json::to_writer(&mut out, r).map_err(|e| export(&e))?;
                out.write_all(b"\n").map_err(|e| export(&e))?;
            }
            out.flush().map_err(|e| export(&e))?;
        }
    }
    Ok(rows.len())
}

fn check_columns(found: &[String], path: &Path) -> Result<()> {
    let missing: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|c| !found.iter().any(|f| f == c))
        .collect();
    let extra: Vec<&str> = found
        .iter()
        .map(String::as_str)
        .filter(|f| !COLUMNS.contains(f))
        .collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing column(s) {}", missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("unexpected column(s) {}", extra.join(", ")));
    }
    Err(Error::Schema(format!("{}: {}", path.display(), parts.join("; "))))
}

/// Read an export; the format follows the file extension.
pub fn read_responses(path: &Path) -> Result<Vec<ResponsesRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match ExportFormat::from_path(path) {
        ExportFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let header: Vec<String> = r
                .headers()
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
                .iter()
                .map(str::to_string)
                .collect();
            if header.iter().all(|h| h.is_empty()) {
                return Err(Error::Schema(format!("{}: no header row", path.display())));
            }
            check_columns(&header, path)?;
            r.deserialize()
                .enumerate()
                .map(|(i, row)| {
                    row.map_err(|e| Error::Syntax {
                        path: path.to_path_buf(),
                        line: Some(i + 2),
                        message: e.to_string(),
                    })
                })
                .collect()
        }
        ExportFormat::JsonLines => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let syntax = |message: String| Error::Syntax {
                    path: path.to_path_buf(),
                    line: Some(i + 1),
                    message,
                };
                let value: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&line).map_err(|e| syntax(e.to_string()))?;
                let keys: Vec<String> = value.keys().cloned().collect();
                check_columns(&keys, path)?;
                rows.push(
                    serde_json::from_value(serde_json::Value::Object(value)).map_err(|e| syntax(e.to_string()))?,
                );
            }
            Ok(rows)
        }
    }
}
