mod support;

use proptest::prelude::*;
use stance_core::parser::parse_response;
use support::corpus::{check_invariants, expected_status, fuzz_text, generate, scales, Route};
use support::oracle::XorShift;

#[test]
fn corpus_agrees_with_generator() {
    let corpus = generate();
    assert!(corpus.len() >= 500, "corpus has {} cases", corpus.len());
    for route in [Route::Fraction, Route::FirstNumber, Route::LaterNumber, Route::Label, Route::Refusal] {
        assert!(corpus.iter().any(|(_, c)| c.route == route), "{route:?} not covered");
    }
    let mut mismatches = Vec::new();
    for (scale, case) in &corpus {
        let p = parse_response(&case.text, scale);
        if p.score != case.intended || p.parse_status != expected_status(case.route) {
            mismatches.push(format!(
                "{:?}: {:?} -> {:?} {:?} (wanted {:?})",
                case.route, case.text, p.score, p.parse_status, case.intended
            ));
        }
        check_invariants(&case.text, scale, &p).unwrap();
    }
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

#[test]
fn totality_fuzz() {
    let scales = scales();
    let mut rng = XorShift(0x9E37_79B9_7F4A_7C15);
    for _ in 0..100_000 {
        let text = fuzz_text(&mut rng);
        let scale = &scales[rng.below(scales.len() as u64) as usize];
        let p = parse_response(&text, scale);
        if let Err(e) = check_invariants(&text, scale, &p) {
            panic!("{text:?}: {e}");
        }
    }
}

const FILLER: &[&str] = &["the", "policy", "maybe", "because", "context", "matters", "overall", "view", "this"];

proptest! {
    #[test]
    fn arbitrary_strings_never_panic(text in ".{0,80}") {
        for scale in scales() {
            let p = parse_response(&text, &scale);
            prop_assert!(check_invariants(&text, &scale, &p).is_ok());
        }
    }

    #[test]
    fn appending_plain_words_keeps_the_score(
        idx in 0usize..10_000,
        words in prop::collection::vec(prop::sample::select(FILLER), 1..8),
    ) {
        let corpus = generate();
        let (scale, case) = &corpus[idx % corpus.len()];
        let before = parse_response(&case.text, scale);
        prop_assume!(before.score.is_some());
        let extended = format!("{} {}", case.text, words.join(" "));
        prop_assert_eq!(parse_response(&extended, scale).score, before.score);
    }
}
