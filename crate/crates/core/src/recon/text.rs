//! Word and character error rates.

use crate::error::{Error, Result};

/// Operation counts of a minimal unit-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn cost(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.cost() as f64 / self.ref_len as f64
    }
}

/// Levenshtein alignment of `hyp` against `reference`.
///
/// On equal cost the backtrace prefers a match or substitution, then a
/// deletion, then an insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[idx(i, 0)] = i;
    }
    for j in 0..=m {
        d[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[idx(i, j)] = diag.min(d[idx(i - 1, j)] + 1).min(d[idx(i, j - 1)] + 1);
        }
    }
    let mut counts = EditCounts {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[idx(i, j)];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if d[idx(i - 1, j - 1)] + usize::from(!same) == here {
                counts.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[idx(i - 1, j)] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn wer<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    Ok(align(&r, &h).rate())
}

/// WER on raw strings after [`normalize_text`] and whitespace splitting.
pub fn wer_text(reference: &str, hyp: &str) -> Result<f64> {
    let r = normalize_text(reference);
    let h = normalize_text(hyp);
    wer(
        &r.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>(),
        &h.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>(),
    )
}

pub fn cer(reference: &str, hyp: &str) -> Result<f64> {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    let h: Vec<char> = normalize_text(hyp).chars().collect();
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(align(&r, &h).rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_cost(a: &[u8], b: &[u8]) -> usize {
        // Exhaustive recursion over the three edit moves; exponential but fine for <= 8.
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_cost(ra, rb) + usize::from(x != y);
                sub.min(brute_cost(ra, b) + 1).min(brute_cost(a, rb) + 1)
            }
        }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(wer(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 0.0);
        let c = align(&["a", "b", "c"], &["a", "x", "c", "d"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 1));
        assert!((wer(&["a", "b", "c"], &["a", "x", "c", "d"]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("abc", "").unwrap(), 1.0);
        assert!(matches!(
            wer::<&str>(&[], &["a"]),
            Err(Error::EmptyReference)
        ));
        assert!(cer("  ", "a").is_err());
    }

    #[test]
    fn normalization_folds_case_and_space() {
        assert_eq!(cer("Hello   World", "hello world").unwrap(), 0.0);
        assert_eq!(wer_text("The  cat", "the CAT").unwrap(), 0.0);
        assert_eq!(cer("ab", "abcd").unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn alignment_cost_is_minimal(a in prop::collection::vec(0u8..3, 0..=8), b in prop::collection::vec(0u8..3, 0..=8)) {
            let c = align(&a, &b);
            prop_assert_eq!(c.cost(), brute_cost(&a, &b));
            // Matched plus substituted positions are shared by both sides.
            prop_assert_eq!(a.len() - c.deletions, b.len() - c.insertions);
        }
    }
}
