//! Templated response corpus with known intended scores.
//!
//! Written independently of the parser: each template states the score it
//! embeds and which extraction route a careful reader would take.

use stance_core::parser::{ParseStatus, ParsedResponse};
use stance_core::scale::{ResponseScale, ScaleLabel};

use super::oracle::XorShift;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Fraction,
    FirstNumber,
    LaterNumber,
    Label,
    Refusal,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub text: String,
    pub intended: Option<i32>,
    pub route: Route,
}

pub const JUSTIFICATIONS: &[&str] = &[
    "Because tradition provides stability.",
    "Order and liberty must balance each other.",
    "Rules protect the vulnerable more often than they hurt them.",
    "Communities thrive when dissent is tolerated.",
    "Strong institutions matter, but so does individual conscience.",
];

pub const REFUSALS: &[&str] = &[
    "As an AI I can't take political positions.",
    "I prefer not to answer this one.",
    "This question is too complex for a single rating.",
    "",
    "   ",
    "It depends on the context and the people involved.",
];

pub fn scales() -> Vec<ResponseScale> {
    let five = ["strongly disagree", "disagree", "undecided", "agree", "strongly agree"];
    let eleven: Vec<ScaleLabel> = (0..=10)
        .map(|s| ScaleLabel {
            score: s,
            label: format!("level {}", ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"][s as usize]),
        })
        .collect();
    vec![
        ResponseScale::agreement_7(),
        ResponseScale {
            min: 1,
            max: 5,
            labels: five
                .iter()
                .enumerate()
                .map(|(i, l)| ScaleLabel {
                    score: i as i32 + 1,
                    label: l.to_string(),
                })
                .collect(),
        },
        ResponseScale {
            min: 0,
            max: 10,
            labels: eleven,
        },
        ResponseScale {
            min: 1,
            max: 4,
            labels: ["never", "rarely", "often", "always"]
                .iter()
                .enumerate()
                .map(|(i, l)| ScaleLabel {
                    score: i as i32 + 1,
                    label: l.to_string(),
                })
                .collect(),
        },
    ]
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Every template instantiated for every in-range score of every scale.
pub fn generate() -> Vec<(ResponseScale, Case)> {
    let mut out = Vec::new();
    for scale in scales() {
        let (lo, hi) = (scale.min, scale.max);
        for s in lo..=hi {
            for (j, just) in JUSTIFICATIONS.iter().enumerate() {
                let mut push = |text: String, route: Route| {
                    out.push((
                        scale.clone(),
                        Case {
                            text,
                            intended: Some(s),
                            route,
                        },
                    ))
                };
                // vary the template set by justification index to keep the corpus compact
                match j % 5 {
                    0 => {
                        push(format!("{s} - {just}"), Route::FirstNumber);
                        push(format!("I'd say {s}/{hi} here, honestly."), Route::Fraction);
                        push(format!("On a scale of {lo} to {hi} I choose {s}."), Route::LaterNumber);
                    }
                    1 => {
                        push(format!("Score: {s}. {just}"), Route::FirstNumber);
                        push(format!("Rating: {s}/{hi} - {just}"), Route::Fraction);
                        push(format!("Between {lo} and {hi}, I pick {s}. {just}"), Route::LaterNumber);
                    }
                    2 => {
                        push(format!("**{s}** — {just}"), Route::FirstNumber);
                        push(format!("Out of {hi}, I'd give it a {s}. {just}"), Route::LaterNumber);
                        push(format!("Using the {lo}-{hi} scale, my answer is {s}. {just}"), Route::LaterNumber);
                    }
                    3 => {
                        push(format!("- Answer: {s} ({just})"), Route::FirstNumber);
                        push(format!("From {lo} to {hi}: {s}, {just}"), Route::LaterNumber);
                        push(format!("In 2024 I would still answer {s}. {just}"), Route::LaterNumber);
                    }
                    _ => {
                        push(format!("I would choose {s}, {just}"), Route::FirstNumber);
                        push(format!("{s} out of {hi}: {just}"), Route::FirstNumber);
                        push(format!("Weighing 3.5 competing concerns, {s}. {just}"), Route::LaterNumber);
                    }
                }
            }
            let label = scale.label_for(s).unwrap().to_string();
            for (j, just) in JUSTIFICATIONS.iter().enumerate() {
                let text = match j % 3 {
                    0 => format!("{}. {just}", capitalize(&label)),
                    1 => format!("I would say {label} on this one. {just}"),
                    _ => format!("**{}** - {just}", label.to_uppercase()),
                };
                out.push((
                    scale.clone(),
                    Case {
                        text,
                        intended: Some(s),
                        route: Route::Label,
                    },
                ));
            }
        }
        for r in REFUSALS {
            out.push((
                scale.clone(),
                Case {
                    text: r.to_string(),
                    intended: None,
                    route: Route::Refusal,
                },
            ));
        }
    }
    out
}

pub fn expected_status(route: Route) -> ParseStatus {
    match route {
        Route::Fraction | Route::FirstNumber => ParseStatus::Ok,
        Route::LaterNumber | Route::Label => ParseStatus::Recovered,
        Route::Refusal => ParseStatus::Failed,
    }
}

pub fn check_invariants(text: &str, scale: &ResponseScale, p: &ParsedResponse) -> Result<(), String> {
    match p.score {
        None => {
            if p.parse_status != ParseStatus::Failed || p.matched_span.is_some() {
                return Err(format!("unscored but {:?} / {:?}", p.parse_status, p.matched_span));
            }
        }
        Some(s) => {
            if p.parse_status == ParseStatus::Failed {
                return Err("scored but failed".into());
            }
            if !scale.contains(s) {
                return Err(format!("score {s} outside [{}, {}]", scale.min, scale.max));
            }
            let span = p.matched_span.clone().ok_or("scored without span")?;
            if span.start >= span.end || span.end > text.chars().count() {
                return Err(format!("span {span:?} outside text"));
            }
            if p.matched_text(text).is_none() {
                return Err("span does not slice the text".into());
            }
        }
    }
    Ok(())
}

pub const PIECES: &[&str] = &[
    "0", "1", "4", "7", "10", "-", "/", ".", ",", ":", " ", "  ", "\n", "of", "out of", "to", "between", "and",
    "scale", "from", "agree", "strongly", "disagree", "neutral", "slightly", "never", "always", "%", "$", "é", "—",
    "–", "🙂", "Score:", "answer", "*", "(", ")", "x", "2024-01-05", "6.5", "-3", "7-point", "NaN",
];

/// A random concatenation of up to 11 pieces.
pub fn fuzz_text(rng: &mut XorShift) -> String {
    let n = rng.below(12) as usize;
    let mut text = String::new();
    for _ in 0..n {
        text.push_str(PIECES[rng.below(PIECES.len() as u64) as usize]);
    }
    text
}
