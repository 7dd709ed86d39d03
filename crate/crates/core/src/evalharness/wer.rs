//! Word error rate by Levenshtein alignment over whitespace-separated words.

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// Edit counts and their rate against the reference length.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    pub wer: f64,
}

impl WerReport {
    fn from_counts(s: usize, d: usize, i: usize, n: usize) -> Self {
        let wer = if n == 0 { 0.0 } else { (s + d + i) as f64 / n as f64 };
        Self {
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_words: n,
            wer,
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Corpus-level pooling: summed edits over summed reference words.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a WerReport>) -> WerReport {
        let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
        for r in reports {
            s += r.substitutions;
            d += r.deletions;
            i += r.insertions;
            n += r.ref_words;
        }
        Self::from_counts(s, d, i, n)
    }
}

/// Aligns `hyp` against `reference`. Among minimum-cost alignments the
/// backtrace from the end prefers substitution (or match), then deletion,
/// then insertion.
pub fn wer(reference: &str, hyp: &str) -> Result<WerReport> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let miss = usize::from(r[i - 1] != h[j - 1]);
            if dp[(i - 1) * w + j - 1] + miss == here {
                s += miss;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            d += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    Ok(WerReport::from_counts(s, d, ins, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_single_substitution() {
        assert_eq!(wer("a b c", "a b c").unwrap().wer, 0.0);
        let r = wer("a b c", "a x c").unwrap();
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 0, 0));
        assert!((r.wer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn deletions_insertions_and_empty_reference() {
        let r = wer("a b c", "").unwrap();
        assert_eq!((r.deletions, r.wer), (3, 1.0));
        let r = wer("a", "x y z").unwrap();
        assert_eq!((r.substitutions, r.insertions), (1, 2));
        assert!(matches!(wer("  ", "a"), Err(EvalError::EmptyReference)));
    }

    #[test]
    fn pooling_sums_counts() {
        let a = wer("a b", "a").unwrap();
        let b = wer("c d e f", "c d e f").unwrap();
        let p = WerReport::pooled([&a, &b]);
        assert_eq!((p.errors(), p.ref_words), (1, 6));
    }
}
