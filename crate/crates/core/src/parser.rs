//! Extraction of a Likert score and justification from free-form model text.
//!
//! Precedence, first match wins:
//!
//! 1. a fraction `X/Y` whose denominator is the scale maximum;
//! 2. a standalone integer in range, ignoring numerals that merely restate
//!    the scale ("scale of 1 to 7", "between 1 and 7", "out of 7"), compound
//!    numbers (dates, decimals, ranges like `1-7`), negatives, and numerals
//!    glued to letters;
//! 3. the leftmost, longest label phrase of the response scale;
//! 4. otherwise the response is marked failed.
//!
//! Rule-2 matches are `ok` when the score is the first numeral in the text and
//! no other in-range candidate with a different value exists; otherwise
//! `recovered`. Label matches are always `recovered`.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scale::ResponseScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Failed,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Ok => "ok",
            ParseStatus::Recovered => "recovered",
            ParseStatus::Failed => "failed",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(ParseStatus::Ok),
            "recovered" => Some(ParseStatus::Recovered),
            "failed" => Some(ParseStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub score: Option<i32>,
    pub justification: String,
    pub parse_status: ParseStatus,
    /// Character (not byte) offsets of the text that produced the score.
    pub matched_span: Option<Range<usize>>,
}

impl ParsedResponse {
    pub fn scored(score: i32, status: ParseStatus, span: Range<usize>, justification: String) -> Self {
        ParsedResponse {
            score: Some(score),
            justification,
            parse_status: status,
            matched_span: Some(span),
        }
    }

    pub fn failed() -> Self {
        ParsedResponse {
            score: None,
            justification: String::new(),
            parse_status: ParseStatus::Failed,
            matched_span: None,
        }
    }

    /// The substring of `text` covered by `matched_span`.
    pub fn matched_text<'a>(&self, text: &'a str) -> Option<&'a str> {
        let span = self.matched_span.as_ref()?;
        let start = char_to_byte(text, span.start);
        let end = char_to_byte(text, span.end);
        text.get(start..end)
    }
}

fn char_to_byte(text: &str, chars: usize) -> usize {
    text.char_indices()
        .nth(chars)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Numerals stating the scale rather than answering it.
static SCALE_OF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bscale\s+(?:of|from)\s+([0-9]+)\s*(?:to|through|-|–)\s*([0-9]+)").unwrap()
});
static BOUNDED_PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:(?:between)\s+([0-9]+)\s+and\s+([0-9]+)|(?:from\s+)?([0-9]+)\s+(?:to|through)\s+([0-9]+))")
        .unwrap()
});
static OUT_OF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:out\s+)?of\s+([0-9]+)\b").unwrap());

const MARKERS: &[&str] = &[
    "score",
    "answer",
    "rating",
    "my score",
    "my answer",
    "my rating",
    "final answer",
    "final score",
    "response",
];

/// A maximal run of ASCII digits joined by single separators, e.g. `6`, `4/7`,
/// `2024-01-05`, `6.5`.
#[derive(Debug)]
struct Chain {
    start: usize,
    end: usize,
    runs: Vec<(usize, usize)>,
    seps: Vec<u8>,
}

fn is_chain_sep(b: u8) -> bool {
    matches!(b, b'/' | b'.' | b',' | b':' | b'-')
}

fn numeric_chains(text: &str) -> Vec<Chain> {
    let bytes = text.as_bytes();
    let mut chains = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        let mut runs = Vec::new();
        let mut seps = Vec::new();
        loop {
            let rs = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            runs.push((rs, i));
            if i + 1 < bytes.len() && is_chain_sep(bytes[i]) && bytes[i + 1].is_ascii_digit() {
                seps.push(bytes[i]);
                i += 1;
                continue;
            }
            // en dash between digits
            if text[i..].starts_with('–')
                && text[i + '–'.len_utf8()..]
                    .bytes()
                    .next()
                    .is_some_and(|b| b.is_ascii_digit())
            {
                seps.push(b'-');
                i += '–'.len_utf8();
                continue;
            }
            break;
        }
        chains.push(Chain {
            start,
            end: i,
            runs,
            seps,
        });
    }
    chains
}

fn prev_char(text: &str, byte: usize) -> Option<char> {
    text[..byte].chars().next_back()
}

fn next_char(text: &str, byte: usize) -> Option<char> {
    text[byte..].chars().next()
}

fn parse_int(s: &str) -> Option<i32> {
    s.parse::<i32>().ok()
}

/// True when the chain is glued to a word, a sign, or a decimal point.
fn is_embedded(text: &str, chain: &Chain) -> bool {
    let before = prev_char(text, chain.start);
    let after = next_char(text, chain.end);
    if before.is_some_and(|c| c.is_alphanumeric() || c == '$' || c == '.') {
        return true;
    }
    if after.is_some_and(|c| c.is_alphanumeric() || c == '%') {
        return true;
    }
    // hyphenated compounds such as "7-point"
    if after == Some('-') && next_char(text, chain.end + 1).is_some_and(|c| c.is_alphabetic()) {
        return true;
    }
    if matches!(before, Some('-') | Some('−') | Some('+')) {
        let sign_at = chain.start - before.unwrap().len_utf8();
        let ahead = prev_char(text, sign_at);
        if ahead.is_none_or(|c| !c.is_alphanumeric()) {
            return true;
        }
    }
    false
}

fn restatement_spans(text: &str, scale: &ResponseScale) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    for cap in SCALE_OF.captures_iter(text) {
        for g in [1, 2] {
            if let Some(m) = cap.get(g) {
                spans.push(m.range());
            }
        }
    }
    for cap in BOUNDED_PAIR.captures_iter(text) {
        let (a, b) = match (cap.get(1), cap.get(2), cap.get(3), cap.get(4)) {
            (Some(a), Some(b), _, _) | (_, _, Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        if parse_int(a.as_str()) == Some(scale.min) && parse_int(b.as_str()) == Some(scale.max) {
            spans.push(a.range());
            spans.push(b.range());
        }
    }
    for cap in OUT_OF.captures_iter(text) {
        let m = cap.get(1).unwrap();
        if parse_int(m.as_str()) == Some(scale.max) {
            spans.push(m.range());
        }
    }
    spans
}

fn is_separator(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '-' | '–' | '—' | ':' | ',' | '(' | ')' | '[' | ']' | '.' | ';' | '*' | '_' | '/'
        )
}

fn strip_leading_markers(s: &str) -> &str {
    let mut s = s.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['*', '_', '#', '>', '`', '•', '·']).trim_start();
        for bullet in ["- ", "+ ", "* "] {
            if let Some(rest) = s.strip_prefix(bullet) {
                s = rest.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

fn justification_around(text: &str, start: usize, end: usize) -> String {
    let prefix = strip_leading_markers(text[..start].trim_end_matches(is_separator));
    let prefix_norm = prefix
        .trim_matches(|c: char| is_separator(c) || c == '#')
        .to_lowercase();
    let prefix = if prefix_norm.is_empty() || MARKERS.contains(&prefix_norm.as_str()) {
        ""
    } else {
        prefix
    };
    let suffix = text[end..].trim_start_matches(is_separator);
    let suffix = suffix.trim_end_matches(['*', '_']).trim_end();
    let suffix = suffix.strip_suffix(')').filter(|s| !s.contains('(')).unwrap_or(suffix);
    match (prefix.is_empty(), suffix.is_empty()) {
        (true, _) => suffix.trim().to_string(),
        (false, true) => prefix.trim().to_string(),
        (false, false) => format!("{} {}", prefix.trim(), suffix.trim()),
    }
}

/// Words of `text` (alphanumeric runs, case-folded) with their byte ranges.
fn words(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() || c == '\'' {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push((text[s..i].to_lowercase(), s..i));
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

fn label_match(text: &str, scale: &ResponseScale) -> Option<(i32, Range<usize>)> {
    let tokens = words(text);
    let mut labels: Vec<(i32, Vec<String>)> = scale
        .labels
        .iter()
        .map(|l| (l.score, words(&l.label).into_iter().map(|(w, _)| w).collect::<Vec<_>>()))
        .filter(|(_, w)| !w.is_empty())
        .collect();
    // longest first so the first hit at a position is the longest
    labels.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    for pos in 0..tokens.len() {
        for (score, lw) in &labels {
            if pos + lw.len() > tokens.len() {
                continue;
            }
            if tokens[pos..pos + lw.len()]
                .iter()
                .zip(lw)
                .all(|((t, _), w)| t == w)
            {
                let start = tokens[pos].1.start;
                let end = tokens[pos + lw.len() - 1].1.end;
                return Some((*score, start..end));
            }
        }
    }
    None
}

/// Map a text fragment to a score via the scale's label phrases
/// (leftmost match, longest label at that position).
pub fn label_map(fragment: &str, scale: &ResponseScale) -> Option<i32> {
    label_match(fragment, scale).map(|(s, _)| s)
}

pub fn parse_response(text: &str, scale: &ResponseScale) -> ParsedResponse {
    let chains = numeric_chains(text);

    // rule 1: X/Y with Y the scale maximum
    for c in &chains {
        if c.runs.len() == 2 && c.seps == *b"/" && !is_embedded(text, c) {
            let x = parse_int(&text[c.runs[0].0..c.runs[0].1]);
            let y = parse_int(&text[c.runs[1].0..c.runs[1].1]);
            if let (Some(x), Some(y)) = (x, y) {
                if y == scale.max && scale.contains(x) {
                    return ParsedResponse::scored(
                        x,
                        ParseStatus::Ok,
                        byte_to_char(text, c.start)..byte_to_char(text, c.end),
                        justification_around(text, c.start, c.end),
                    );
                }
            }
        }
    }

    // rule 2: standalone integers
    let excluded = restatement_spans(text, scale);
    let candidates: Vec<(i32, &Chain)> = chains
        .iter()
        .filter(|c| c.runs.len() == 1 && !is_embedded(text, c))
        .filter(|c| !excluded.iter().any(|r| r.start <= c.start && c.end <= r.end))
        .filter_map(|c| parse_int(&text[c.start..c.end]).map(|v| (v, c)))
        .filter(|(v, _)| scale.contains(*v))
        .collect();
    if let Some(&(score, chain)) = candidates.first() {
        let first_numeral = chains.first().map(|c| c.start) == Some(chain.start);
        let unambiguous = candidates.iter().all(|(v, _)| *v == score);
        let status = if first_numeral && unambiguous {
            ParseStatus::Ok
        } else {
            ParseStatus::Recovered
        };
        return ParsedResponse::scored(
            score,
            status,
            byte_to_char(text, chain.start)..byte_to_char(text, chain.end),
            justification_around(text, chain.start, chain.end),
        );
    }

    // rule 3: label phrases
    if let Some((score, span)) = label_match(text, scale) {
        if scale.contains(score) {
            return ParsedResponse::scored(
                score,
                ParseStatus::Recovered,
                byte_to_char(text, span.start)..byte_to_char(text, span.end),
                text.trim().to_string(),
            );
        }
    }

    ParsedResponse::failed()
}
