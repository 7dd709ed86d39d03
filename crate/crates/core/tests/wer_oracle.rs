mod common;

use proptest::prelude::*;

use common::{wer_counts, word_seq};
use speechrep::evalharness::{wer, EvalError, WerReport};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_recursive_alignment(r in word_seq(6).prop_filter("non-empty", |s| !s.is_empty()), h in word_seq(6)) {
        let rep = wer(&r, &h).unwrap();
        let (e, s, d, i) = wer_counts(&r, &h);
        prop_assert_eq!((rep.substitutions, rep.deletions, rep.insertions), (s, d, i));
        prop_assert_eq!(rep.errors(), e);
        prop_assert!((rep.wer - e as f64 / rep.ref_words as f64).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_the_longer_side(r in word_seq(8).prop_filter("non-empty", |s| !s.is_empty()), h in word_seq(8)) {
        let rep = wer(&r, &h).unwrap();
        let hl = h.split_whitespace().count();
        prop_assert!(rep.wer <= rep.ref_words.max(hl) as f64 / rep.ref_words as f64 + 1e-12);
    }
}

#[test]
fn tie_break_prefers_substitution() {
    let r = wer("a b", "b c").unwrap();
    assert_eq!((r.substitutions, r.deletions, r.insertions), (2, 0, 0));
    let r = wer("a b c", "a x c").unwrap();
    assert_eq!(r.substitutions, 1);
    assert!((r.wer - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn empty_reference_is_rejected() {
    assert!(matches!(wer("  ", "a"), Err(EvalError::EmptyReference)));
}

#[test]
fn pooling_sums_counts() {
    let a = wer("a b c", "a c").unwrap();
    let b = wer("d", "e f").unwrap();
    let p = WerReport::pooled([&a, &b]);
    assert_eq!(p.ref_words, 4);
    assert_eq!(p.errors(), 3);
    assert!((p.wer - 0.75).abs() < 1e-12);
}
