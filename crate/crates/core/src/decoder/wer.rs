use crate::error::{contract, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Word error rate of one hypothesis: edit distance over reference length.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(contract("wer needs a non-empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Corpus-level accumulator: total edits over total reference tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WerTally {
    pub edits: usize,
    pub reference_tokens: usize,
}

impl WerTally {
    pub fn add<T: PartialEq>(&mut self, reference: &[T], hypothesis: &[T]) {
        self.edits += edit_distance(reference, hypothesis);
        self.reference_tokens += reference.len();
    }

    pub fn merge(&mut self, other: WerTally) {
        self.edits += other.edits;
        self.reference_tokens += other.reference_tokens;
    }

    pub fn rate(&self) -> f64 {
        if self.reference_tokens == 0 {
            0.0
        } else {
            self.edits as f64 / self.reference_tokens as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over edit scripts (no memoisation).
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                let del = brute(ra, b) + 1;
                let ins = brute(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn one_deletion() {
        assert!((wer(&['a', 'b', 'c'], &['a', 'c']).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_reference_errors() {
        assert!(wer::<u8>(&[], &[1]).is_err());
    }

    #[test]
    fn tally_pools_edits() {
        let mut t = WerTally::default();
        t.add(&[1, 2], &[1]);
        t.add(&[1, 2, 3, 4], &[1, 2, 3, 4]);
        assert!((t.rate() - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn matches_exhaustive_edit_search(
            a in proptest::collection::vec(0u8..3, 0..=8),
            b in proptest::collection::vec(0u8..3, 0..=8),
        ) {
            prop_assert_eq!(edit_distance(&a, &b), brute(&a, &b));
        }

        #[test]
        fn edit_distance_is_symmetric(
            a in proptest::collection::vec(0u8..4, 1..=10),
            b in proptest::collection::vec(0u8..4, 1..=10),
        ) {
            let ab = wer(&a, &b).unwrap() * a.len() as f64;
            let ba = wer(&b, &a).unwrap() * b.len() as f64;
            prop_assert!((ab - ba).abs() < 1e-9);
        }
    }
}
