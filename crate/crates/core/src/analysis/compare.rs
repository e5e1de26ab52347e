use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::AggregateStat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaDelta {
    pub persona_id: String,
    /// Positive when the persona scores above the baseline.
    pub delta_mean: f64,
}

/// Deltas of every non-baseline persona against `baseline_id`, in input order.
pub fn persona_deltas(means: &[(String, f64)], baseline_id: &str) -> Result<Vec<PersonaDelta>> {
    let base = means
        .iter()
        .find(|(p, _)| p == baseline_id)
        .map(|(_, m)| *m)
        .ok_or_else(|| Error::Stats(format!("baseline persona `{baseline_id}` has no statistics")))?;
    Ok(means
        .iter()
        .filter(|(p, _)| p != baseline_id)
        .map(|(p, m)| PersonaDelta {
            persona_id: p.clone(),
            delta_mean: m - base,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeProfile {
    pub min_persona: String,
    pub max_persona: String,
    pub spread: f64,
    /// More than one persona shares the minimum or the maximum mean.
    pub tie: bool,
}

/// Lowest and highest scoring personas. Ties go to the earliest entry.
pub fn range_profile(means: &[(String, f64)]) -> Result<RangeProfile> {
    if means.len() < 2 {
        return Err(Error::Stats(format!(
            "range profile needs at least 2 personas (got {})",
            means.len()
        )));
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, (_, m)) in means.iter().enumerate() {
        if *m < means[lo].1 {
            lo = i;
        }
        if *m > means[hi].1 {
            hi = i;
        }
    }
    let (min, max) = (means[lo].1, means[hi].1);
    let tie = means.iter().filter(|(_, m)| *m == min).count() > 1 || means.iter().filter(|(_, m)| *m == max).count() > 1;
    Ok(RangeProfile {
        min_persona: means[lo].0.clone(),
        max_persona: means[hi].0.clone(),
        spread: max - min,
        tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureComparison {
    pub low_temperature: f64,
    pub high_temperature: f64,
    /// mean(high) - mean(low).
    pub mean_diff: f64,
    pub sd_low: f64,
    pub sd_high: f64,
    /// sd_high / sd_low; `None` when sd_low is 0.
    pub sd_ratio: Option<f64>,
}

pub fn compare_temperatures(low_t: f64, low: &AggregateStat, high_t: f64, high: &AggregateStat) -> TemperatureComparison {
    TemperatureComparison {
        low_temperature: low_t,
        high_temperature: high_t,
        mean_diff: high.mean - low.mean,
        sd_low: low.sd,
        sd_high: high.sd,
        sd_ratio: if low.sd > 0.0 {
            Some(high.sd / low.sd)
        } else if high.sd == 0.0 {
            Some(1.0)
        } else {
            None
        },
    }
}

/// One line of a human benchmark file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scale_id: String,
    #[serde(default)]
    pub subscale_id: Option<String>,
    /// Persona-equivalent group; empty matches every persona.
    #[serde(default)]
    pub group: Option<String>,
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Syntax {
            path: path.to_path_buf(),
            line: None,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    for required in ["scale_id", "mean", "sd", "n"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Schema(format!("{}: missing column {required}", path.display())));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<BenchmarkRow>().enumerate() {
        let line = i + 2;
        let mut row = rec.map_err(|e| Error::Syntax {
            path: path.to_path_buf(),
            line: Some(line),
            message: e.to_string(),
        })?;
        row.subscale_id = row.subscale_id.filter(|s| !s.is_empty());
        row.group = row.group.filter(|s| !s.is_empty());
        if row.n < 1 || row.sd.is_nan() || row.sd < 0.0 || !row.mean.is_finite() {
            return Err(Error::Syntax {
                path: path.to_path_buf(),
                line: Some(line),
                message: "benchmark rows need n >= 1, sd >= 0 and a finite mean".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A model-side mean to be set against the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMean {
    pub model_name: String,
    pub persona_id: String,
    pub scale_id: String,
    pub subscale_id: Option<String>,
    pub temperature: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDeviation {
    pub model_name: String,
    pub persona_id: String,
    pub scale_id: String,
    pub subscale_id: Option<String>,
    pub temperature: f64,
    pub group: Option<String>,
    pub model_mean: f64,
    pub human_mean: f64,
    /// model - human.
    pub deviation: f64,
    /// model / human; `None` when the human mean is 0.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkComparison {
    pub deviations: Vec<BenchmarkDeviation>,
    /// Model keys with no benchmark row, as `scale[/subscale]`.
    pub gaps: Vec<String>,
}

pub fn deviation(model_mean: f64, human_mean: f64) -> (f64, Option<f64>) {
    let ratio = if human_mean != 0.0 {
        Some(model_mean / human_mean)
    } else {
        None
    };
    (model_mean - human_mean, ratio)
}

/// Match each model mean to a benchmark row with the same scale and subscale,
/// preferring a row whose group equals the persona over an ungrouped row.
pub fn compare_to_benchmark(model: &[ModelMean], bench: &[BenchmarkRow]) -> BenchmarkComparison {
    let mut out = BenchmarkComparison::default();
    for m in model {
        let same_target = |b: &&BenchmarkRow| b.scale_id == m.scale_id && b.subscale_id == m.subscale_id;
        let row = bench
            .iter()
            .filter(same_target)
            .find(|b| b.group.as_deref() == Some(m.persona_id.as_str()))
            .or_else(|| bench.iter().filter(same_target).find(|b| b.group.is_none()));
        match row {
            Some(b) => {
                let (deviation, ratio) = deviation(m.mean, b.mean);
                out.deviations.push(BenchmarkDeviation {
                    model_name: m.model_name.clone(),
                    persona_id: m.persona_id.clone(),
                    scale_id: m.scale_id.clone(),
                    subscale_id: m.subscale_id.clone(),
                    temperature: m.temperature,
                    group: b.group.clone(),
                    model_mean: m.mean,
                    human_mean: b.mean,
                    deviation,
                    ratio,
                });
            }
            None => {
                let key = match &m.subscale_id {
                    Some(s) => format!("{}/{s}", m.scale_id),
                    None => m.scale_id.clone(),
                };
                if !out.gaps.contains(&key) {
                    out.gaps.push(key);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn means(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(p, m)| (p.to_string(), *m)).collect()
    }

    #[test]
    fn deltas_against_baseline() {
        let d = persona_deltas(&means(&[("base", 3.0), ("ext-con", 5.5)]), "base").unwrap();
        assert_eq!(d, vec![PersonaDelta { persona_id: "ext-con".into(), delta_mean: 2.5 }]);
        assert!(persona_deltas(&means(&[("a", 1.0)]), "base").is_err());
        let only = persona_deltas(&means(&[("base", 3.0)]), "base").unwrap();
        assert!(only.is_empty());
    }

    #[test]
    fn range_examples() {
        let r = range_profile(&means(&[("lib", 2.0), ("base", 4.0), ("con", 7.0)])).unwrap();
        assert_eq!((r.min_persona.as_str(), r.max_persona.as_str(), r.spread, r.tie), ("lib", "con", 5.0, false));
        let r = range_profile(&means(&[("a", 4.0), ("b", 4.0), ("c", 4.0)])).unwrap();
        assert_eq!((r.min_persona.as_str(), r.max_persona.as_str(), r.spread, r.tie), ("a", "a", 0.0, true));
        assert!(range_profile(&means(&[("a", 1.0)])).is_err());
    }

    #[test]
    fn identical_temperature_cells() {
        let s = super::super::stats::summarize(&[3.0, 4.0, 5.0]).unwrap();
        let c = compare_temperatures(0.0, &s, 1.0, &s);
        assert_eq!((c.mean_diff, c.sd_ratio), (0.0, Some(1.0)));
    }

    fn bench(scale: &str, mean: f64) -> BenchmarkRow {
        BenchmarkRow {
            scale_id: scale.into(),
            subscale_id: None,
            group: None,
            mean,
            sd: 1.0,
            n: 100,
        }
    }

    fn model_mean(scale: &str, mean: f64) -> ModelMean {
        ModelMean {
            model_name: "m".into(),
            persona_id: "base".into(),
            scale_id: scale.into(),
            subscale_id: None,
            temperature: 0.0,
            mean,
        }
    }

    #[test]
    fn benchmark_half_and_gaps() {
        let c = compare_to_benchmark(&[model_mean("rwa", 2.0), model_mean("lwa", 3.0)], &[bench("rwa", 4.0)]);
        assert_eq!(c.deviations.len(), 1);
        assert_eq!(c.deviations[0].deviation, -2.0);
        assert_eq!(c.deviations[0].ratio, Some(0.5));
        assert_eq!(c.gaps, vec!["lwa".to_string()]);
        let c = compare_to_benchmark(&[model_mean("rwa", 4.0)], &[bench("rwa", 4.0)]);
        assert_eq!((c.deviations[0].deviation, c.deviations[0].ratio), (0.0, Some(1.0)));
    }

    #[test]
    fn group_specific_rows_win() {
        let mut grouped = bench("rwa", 6.0);
        grouped.group = Some("base".into());
        let c = compare_to_benchmark(&[model_mean("rwa", 3.0)], &[bench("rwa", 4.0), grouped]);
        assert_eq!(c.deviations[0].human_mean, 6.0);
    }

    proptest! {
        #[test]
        fn spread_is_max_pairwise_difference(ms in prop::collection::vec(1.0f64..7.0, 2..12)) {
            let named: Vec<(String, f64)> = ms.iter().enumerate().map(|(i, m)| (format!("p{i}"), *m)).collect();
            let r = range_profile(&named).unwrap();
            let mut brute = 0.0f64;
            for a in &ms {
                for b in &ms {
                    brute = brute.max((a - b).abs());
                }
            }
            prop_assert_eq!(r.spread, brute);
        }

        #[test]
        fn delta_differences_equal_mean_differences(ms in prop::collection::vec(1.0f64..7.0, 2..10)) {
            let named: Vec<(String, f64)> = ms.iter().enumerate().map(|(i, m)| (format!("p{i}"), *m)).collect();
            let d = persona_deltas(&named, "p0").unwrap();
            for (i, a) in d.iter().enumerate() {
                for b in &d[i..] {
                    let ma = named.iter().find(|(p, _)| *p == a.persona_id).unwrap().1;
                    let mb = named.iter().find(|(p, _)| *p == b.persona_id).unwrap().1;
                    prop_assert!(((a.delta_mean - b.delta_mean) - (ma - mb)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn deviation_flips_sign_when_swapped(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert_eq!(deviation(a, b).0, -deviation(b, a).0);
        }
    }
}
