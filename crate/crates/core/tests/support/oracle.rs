//! Hand-written scoring reference, independent of the library.

use stance_core::parser::{ParseStatus, ParsedResponse};
use stance_core::scale::{ResponseScale, ScaleDefinition, ScaleItem, ScaleLabel, ScoringRule, Subscale};

pub fn response_scale(min: i32, width: i32) -> ResponseScale {
    ResponseScale {
        min,
        max: min + width,
        labels: (min..=min + width)
            .map(|s| ScaleLabel {
                score: s,
                label: format!("level {s}"),
            })
            .collect(),
    }
}

pub fn definition(rs: ResponseScale, reverse: &[bool], subs: &[Option<usize>], rule: ScoringRule) -> ScaleDefinition {
    ScaleDefinition {
        scale_id: "x".into(),
        name: "x".into(),
        length: Some(reverse.len()),
        scoring_rule: rule,
        response_scale: rs,
        subscales: (0..3)
            .map(|i| Subscale {
                subscale_id: format!("sub{i}"),
                name: format!("Sub {i}"),
            })
            .collect(),
        items: reverse
            .iter()
            .zip(subs)
            .enumerate()
            .map(|(i, (&r, s))| ScaleItem {
                item_id: format!("i{i}"),
                index: i as u32 + 1,
                text: format!("Item {i}"),
                reverse_scored: r,
                subscale_id: s.map(|k| format!("sub{k}")),
            })
            .collect(),
    }
}

pub fn answer(score: Option<i32>) -> ParsedResponse {
    match score {
        Some(s) => ParsedResponse::scored(s, ParseStatus::Ok, 0..1, String::new()),
        None => ParsedResponse::failed(),
    }
}

/// Key each answered item by hand and aggregate: (total, per subscale sorted by id, failed).
pub fn oracle(def: &ScaleDefinition, answers: &[Option<i32>]) -> (Option<f64>, Vec<(String, f64)>, usize) {
    let (lo, hi) = (def.response_scale.min, def.response_scale.max);
    let mut all = Vec::new();
    let mut per: Vec<(String, Vec<f64>)> = Vec::new();
    let mut failed = 0;
    for (item, a) in def.items.iter().zip(answers) {
        let Some(raw) = a else {
            failed += 1;
            continue;
        };
        let keyed = if item.reverse_scored { hi - raw + lo } else { *raw } as f64;
        all.push(keyed);
        if let Some(s) = &item.subscale_id {
            match per.iter_mut().find(|(k, _)| k == s) {
                Some((_, v)) => v.push(keyed),
                None => per.push((s.clone(), vec![keyed])),
            }
        }
    }
    let agg = |v: &[f64]| -> f64 {
        let s: f64 = v.iter().sum();
        match def.scoring_rule {
            ScoringRule::Sum => s,
            ScoringRule::Mean => s / v.len() as f64,
        }
    };
    let total = if all.is_empty() { None } else { Some(agg(&all)) };
    let mut subs: Vec<(String, f64)> = per.iter().map(|(k, v)| (k.clone(), agg(v))).collect();
    subs.sort_by(|a, b| a.0.cmp(&b.0));
    (total, subs, failed)
}

/// Deterministic xorshift.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    pub fn below(&mut self, m: u64) -> u64 {
        self.next() % m
    }
}

/// A random small instance: definition plus answers (None = unparsed).
pub fn random_instance(rng: &mut XorShift, rule: ScoringRule) -> (ScaleDefinition, Vec<Option<i32>>) {
    let min = rng.below(4) as i32;
    let width = 1 + rng.below(9) as i32;
    let n = 1 + rng.below(12) as usize;
    let reverse: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
    let subs: Vec<Option<usize>> = (0..n)
        .map(|_| match rng.below(4) {
            3 => None,
            k => Some(k as usize),
        })
        .collect();
    let def = definition(response_scale(min, width), &reverse, &subs, rule);
    let answers = (0..n)
        .map(|_| if rng.below(6) == 0 { None } else { Some(min + rng.below(width as u64 + 1) as i32) })
        .collect();
    (def, answers)
}

/// Score with the library and compare against [`oracle`] to 1e-12.
pub fn check_against_oracle(def: &ScaleDefinition, answers: &[Option<i32>]) -> Result<(), String> {
    let parsed: Vec<_> = def
        .items
        .iter()
        .zip(answers)
        .map(|(i, a)| (i.item_id.clone(), answer(*a)))
        .collect();
    let (_, score) = stance_core::scale::score_items(&parsed, def).map_err(|e| e.to_string())?;
    let (total, subs, failed) = oracle(def, answers);
    match (score.total, total) {
        (Some(a), Some(b)) if (a - b).abs() < 1e-12 => {}
        (None, None) => {}
        (a, b) => return Err(format!("total {a:?} vs oracle {b:?}")),
    }
    if score.n_failed != failed || score.n_scored != answers.len() - failed {
        return Err(format!("counts {}/{} vs oracle failed {failed}", score.n_scored, score.n_failed));
    }
    let got: Vec<(String, f64)> = score.per_subscale.into_iter().collect();
    if got.len() != subs.len() {
        return Err(format!("subscales {got:?} vs oracle {subs:?}"));
    }
    for ((ka, a), (kb, b)) in got.iter().zip(&subs) {
        if ka != kb || (a - b).abs() >= 1e-12 {
            return Err(format!("subscale {ka}={a} vs oracle {kb}={b}"));
        }
    }
    Ok(())
}
