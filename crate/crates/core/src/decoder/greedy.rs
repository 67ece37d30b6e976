use crate::tensor::{Real, Tensor};

/// Per-frame argmax, collapse repeats, drop blanks. Blank is the last column.
pub fn greedy_decode<S: Real>(logits: &Tensor<S>) -> Vec<usize> {
    let classes = logits.cols();
    let blank = classes - 1;
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.rows() {
        let row = logits.row_slice(t);
        // first maximum wins ties
        let best = row
            .iter()
            .enumerate()
            .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0;
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(path: &[usize], classes: usize) -> Tensor<f64> {
        let mut data = vec![0.0; path.len() * classes];
        for (t, &k) in path.iter().enumerate() {
            data[t * classes + k] = 1.0;
        }
        Tensor::matrix(path.len(), classes, data).unwrap()
    }

    #[test]
    fn all_blank_is_empty() {
        assert!(greedy_decode(&one_hot(&[3, 3, 3], 4)).is_empty());
    }

    #[test]
    fn collapse_rule() {
        let (a, b, blank) = (0, 1, 2);
        assert_eq!(greedy_decode(&one_hot(&[a, a, b, blank, b], 3)), vec![a, b, b]);
    }

    #[test]
    fn recovers_blank_separated_target() {
        let blank = 5;
        let target = [1, 1, 4, 0, 0, 2];
        let mut path = vec![blank];
        for &t in &target {
            path.extend([t, t, blank]);
        }
        assert_eq!(greedy_decode(&one_hot(&path, 6)), target);
    }

    #[test]
    fn matches_reference_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t_len = rng.gen_range(1..20);
            let data: Vec<f64> = (0..t_len * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let logits = Tensor::matrix(t_len, 4, data).unwrap();
            // reference: argmax sequence, dedup, then filter blanks
            let mut argmax: Vec<usize> = (0..t_len)
                .map(|t| {
                    let r = logits.row_slice(t);
                    (0..4).max_by(|&i, &j| r[i].partial_cmp(&r[j]).unwrap().then(j.cmp(&i))).unwrap()
                })
                .collect();
            argmax.dedup();
            let expected: Vec<usize> = argmax.into_iter().filter(|&k| k != 3).collect();
            assert_eq!(greedy_decode(&logits), expected);
        }
    }
}
