use std::io::{self, Write};

use stance_core::analysis::CellKey;
use stance_core::dispatch::CostEstimate;
use stance_core::storage::summary::SummaryDocument;

fn usd(v: Option<f64>) -> String {
    v.map_or_else(|| "unknown".to_string(), |x| format!("{x:.4}"))
}

fn scale_label(scale_id: &str, subscale_id: Option<&str>) -> String {
    match subscale_id {
        Some(s) => format!("{scale_id}/{s}"),
        None => scale_id.to_string(),
    }
}

fn key_label(k: &CellKey) -> String {
    scale_label(&k.scale_id, k.subscale_id.as_deref())
}

pub fn write_estimate(e: &CostEstimate, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "run {}: {} jobs", e.run_id, e.jobs)?;
    writeln!(
        out,
        "{:<36} {:>8} {:>12} {:>12} {:>12}",
        "model", "jobs", "input_tok", "low_usd", "high_usd"
    )?;
    for m in &e.models {
        writeln!(
            out,
            "{:<36} {:>8} {:>12} {:>12} {:>12}",
            format!("{}/{}", m.provider_id, m.model_name),
            m.jobs,
            m.expected_input_tokens,
            usd(m.low_usd),
            usd(m.high_usd)
        )?;
    }
    writeln!(
        out,
        "{:<36} {:>8} {:>12} {:>12} {:>12}",
        "total",
        e.jobs,
        e.models.iter().map(|m| m.expected_input_tokens).sum::<u64>(),
        usd(Some(e.total_low_usd)),
        usd(Some(e.total_high_usd))
    )
}

pub fn write_summary_tables(doc: &SummaryDocument, out: &mut dyn Write) -> io::Result<()> {
    let m = &doc.metadata;
    writeln!(
        out,
        "{} rows ({} scored, {} unscored), cost ${:.4}",
        m.rows, m.scored_rows, m.unscored_rows, m.total_cost_usd
    )?;

    writeln!(out, "\nscale scores (mean of each repeat)")?;
    writeln!(
        out,
        "{:<20} {:<14} {:<28} {:>5} {:>8} {:>8} {:>5} {:>7}",
        "model", "persona", "scale", "temp", "mean", "sd", "n", "fail%"
    )?;
    for c in &doc.scale_cells {
        writeln!(
            out,
            "{:<20} {:<14} {:<28} {:>5} {:>8.3} {:>8.3} {:>5} {:>7.1}",
            c.key.model_name,
            c.key.persona_id,
            key_label(&c.key),
            c.key.temperature,
            c.stat.mean,
            c.stat.sd,
            c.stat.n,
            100.0 * c.stat.parse_failure_rate
        )?;
    }

    if !doc.persona_deltas.is_empty() {
        writeln!(out, "\ndeltas against `{}`", doc.baseline_persona)?;
        for g in &doc.persona_deltas {
            let deltas: Vec<String> = g
                .deltas
                .iter()
                .map(|d| format!("{} {:+.3}", d.persona_id, d.delta_mean))
                .collect();
            writeln!(
                out,
                "{:<20} {:<28} t={:<4} base {:.3}: {}",
                g.model_name,
                scale_label(&g.scale_id, g.subscale_id.as_deref()),
                g.temperature,
                g.baseline_mean,
                deltas.join(", ")
            )?;
        }
    }

    if !doc.range_profiles.is_empty() {
        writeln!(out, "\nextremes")?;
        for r in &doc.range_profiles {
            writeln!(
                out,
                "{:<20} {:<28} t={:<4} {} .. {} spread {:.3}{}",
                r.model_name,
                scale_label(&r.scale_id, r.subscale_id.as_deref()),
                r.temperature,
                r.profile.min_persona,
                r.profile.max_persona,
                r.profile.spread,
                if r.profile.tie { " (tie)" } else { "" }
            )?;
        }
    }

    if !doc.temperature_comparisons.is_empty() {
        writeln!(out, "\ntemperature")?;
        for t in &doc.temperature_comparisons {
            let c = &t.comparison;
            writeln!(
                out,
                "{:<20} {:<14} {:<28} {} -> {}: mean {:+.3}, sd {:.3} -> {:.3}",
                t.model_name,
                t.persona_id,
                scale_label(&t.scale_id, t.subscale_id.as_deref()),
                c.low_temperature,
                c.high_temperature,
                c.mean_diff,
                c.sd_low,
                c.sd_high
            )?;
        }
    }

    if let Some(b) = &doc.benchmark {
        writeln!(out, "\nbenchmark")?;
        for d in &b.deviations {
            writeln!(
                out,
                "{:<20} {:<14} {:<28} t={:<4} model {:.3} human {:.3} diff {:+.3} ratio {}",
                d.model_name,
                d.persona_id,
                scale_label(&d.scale_id, d.subscale_id.as_deref()),
                d.temperature,
                d.model_mean,
                d.human_mean,
                d.deviation,
                d.ratio.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"))
            )?;
        }
        for g in &b.gaps {
            writeln!(out, "no benchmark row for {g}")?;
        }
    }
    Ok(())
}
