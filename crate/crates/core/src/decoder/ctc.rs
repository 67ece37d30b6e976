//! CTC objective via log-space forward-backward.

use crate::error::{contract, Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

fn lse2<S: Real>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames that can emit `target` (one blank is needed
/// between adjacent repeats).
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_softmax_rows<S: Real>(logits: &Tensor<S>) -> Vec<S> {
    let c = logits.cols();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    out
}

fn validate<S: Real>(logits: &Tensor<S>, target: &[usize]) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 {
        return Err(contract("ctc logits must be a [T, V+1] matrix"));
    }
    let (frames, classes) = (logits.rows(), logits.cols());
    if classes < 2 {
        return Err(contract("ctc needs at least one token plus blank"));
    }
    let blank = classes - 1;
    if target.is_empty() {
        return Err(contract("ctc target must be non-empty"));
    }
    if let Some(&bad) = target.iter().find(|&&t| t >= blank) {
        return Err(contract(format!("target token {bad} outside vocabulary of {blank}")));
    }
    let required = required_frames(target);
    if frames < required {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            required,
            frames,
        });
    }
    Ok((frames, classes))
}

/// Result of one forward-backward pass.
pub struct CtcOutput<S> {
    /// `log p(target | logits)`.
    pub log_likelihood: S,
    /// Gradient of `-log_likelihood` w.r.t. the logits, row-major `[T, V+1]`.
    pub grad: Vec<S>,
}

/// Forward-backward over the blank-augmented target. The blank index is the
/// last logit column.
pub fn forward_backward<S: Real>(logits: &Tensor<S>, target: &[usize]) -> Result<CtcOutput<S>> {
    let (frames, classes) = validate(logits, target)?;
    let blank = classes - 1;
    let logp = log_softmax_rows(logits);
    let lp = |t: usize, k: usize| logp[t * classes + k];

    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &tok in target {
        ext.push(tok);
        ext.push(blank);
    }
    let states = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = S::neg_infinity();

    let mut alpha = vec![ninf; frames * states];
    alpha[0] = lp(0, ext[0]);
    alpha[1] = lp(0, ext[1]);
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = lse2(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = lse2(acc, prev[s - 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + lp(t, ext[s]) };
        }
    }

    let mut beta = vec![ninf; frames * states];
    let last = frames - 1;
    beta[last * states + states - 1] = lp(last, ext[states - 1]);
    beta[last * states + states - 2] = lp(last, ext[states - 2]);
    for t in (0..last).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        for s in 0..states {
            let mut acc = next[s];
            if s + 1 < states {
                acc = lse2(acc, next[s + 1]);
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = lse2(acc, next[s + 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + lp(t, ext[s]) };
        }
    }

    let log_likelihood = lse2(alpha[last * states + states - 1], alpha[last * states + states - 2]);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFinite { op: "ctc" });
    }

    // d(-log p)/d(logit[t,k]) = softmax[t,k] - sum over states labelled k of
    // alpha*beta/(y * p).
    let mut grad = vec![S::zero(); frames * classes];
    let mut occupancy = vec![ninf; classes];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = ninf);
        for s in 0..states {
            let a = alpha[t * states + s];
            let b = beta[t * states + s];
            if a == ninf || b == ninf {
                continue;
            }
            let k = ext[s];
            occupancy[k] = lse2(occupancy[k], a + b - lp(t, k));
        }
        for k in 0..classes {
            let soft = lp(t, k).exp();
            let post = if occupancy[k] == ninf {
                S::zero()
            } else {
                (occupancy[k] - log_likelihood).exp()
            };
            grad[t * classes + k] = soft - post;
        }
    }
    Ok(CtcOutput { log_likelihood, grad })
}

/// `log p(target | logits)` without the gradient.
pub fn log_likelihood<S: Real>(logits: &Tensor<S>, target: &[usize]) -> Result<S> {
    Ok(forward_backward(logits, target)?.log_likelihood)
}

/// Records the CTC loss `-log p(target | logits)` on the tape.
pub fn ctc_loss<S: Real>(tape: &mut Tape<S>, logits: Var, target: &[usize]) -> Result<Var> {
    let out = forward_backward(tape.value(logits), target)?;
    tape.fused_scalar("ctc", logits, -out.log_likelihood, out.grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = None;
        for &p in path {
            if Some(p) != prev && p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
        out
    }

    /// Sums the probability of every length-T path that collapses to target.
    pub(crate) fn brute_force_log_likelihood(logits: &Tensor<f64>, target: &[usize]) -> f64 {
        let (t_len, classes) = (logits.rows(), logits.cols());
        let probs: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let row = logits.row_slice(t);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                row.iter().map(|v| (v - m).exp() / z).collect()
            })
            .collect();
        let mut total = 0.0;
        let mut path = vec![0usize; t_len];
        loop {
            if collapse(&path, classes - 1) == target {
                total += path.iter().enumerate().map(|(t, &k)| probs[t][k]).product::<f64>();
            }
            let mut i = 0;
            loop {
                if i == t_len {
                    return total.ln();
                }
                path[i] += 1;
                if path[i] < classes {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn single_frame_single_alignment() {
        let logits = Tensor::<f64>::from_f64(&[1, 3], &[0.3, -1.2, 0.7]).unwrap();
        let ll = log_likelihood(&logits, &[0]).unwrap();
        let z: f64 = [0.3f64, -1.2, 0.7].iter().map(|v| v.exp()).sum();
        assert!((ll - (0.3 - z.ln())).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        let logits = Tensor::<f64>::from_f64(&[2, 3], &[0.1, 0.5, -0.3, 1.0, -0.4, 0.2]).unwrap();
        let p = |t: usize, k: usize| {
            let row = logits.row_slice(t);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row[k].exp() / z
        };
        let (a, b) = (0, 2);
        let expected = p(0, a) * p(1, a) + p(0, a) * p(1, b) + p(0, b) * p(1, a);
        let ll = log_likelihood(&logits, &[a]).unwrap();
        assert!((ll - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let vocab = rng.gen_range(1..=3usize);
            let t_len = rng.gen_range(1..=6usize);
            let u = rng.gen_range(1..=3usize);
            let target: Vec<usize> = (0..u).map(|_| rng.gen_range(0..vocab)).collect();
            if required_frames(&target) > t_len {
                continue;
            }
            let data: Vec<f64> = (0..t_len * (vocab + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let logits = Tensor::matrix(t_len, vocab + 1, data).unwrap();
            let fb = log_likelihood(&logits, &target).unwrap();
            let bf = brute_force_log_likelihood(&logits, &target);
            assert!((fb - bf).abs() < 1e-9, "fb {fb} vs brute {bf}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (t_len, classes) = (5, 4);
        let target = [0, 2, 2];
        let data: Vec<f64> = (0..t_len * classes).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let logits = Tensor::matrix(t_len, classes, data).unwrap();
        let out = forward_backward(&logits, &target).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let num = -(log_likelihood(&plus, &target).unwrap() - log_likelihood(&minus, &target).unwrap()) / (2.0 * h);
            let a = out.grad[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-3 || (a - num).abs() < 1e-8, "entry {i}: {a} vs {num}");
        }
    }

    #[test]
    fn infeasible_and_empty_targets_error() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(
            log_likelihood(&logits, &[1, 1]),
            Err(Error::InfeasibleTarget { required: 3, frames: 2, .. })
        ));
        assert!(matches!(log_likelihood(&logits, &[]), Err(Error::Contract(_))));
        assert!(log_likelihood(&logits, &[2]).is_err());
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let data: Vec<f64> = (0..8 * 5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let logits = Tensor::matrix(8, 5, data).unwrap();
            let ll = log_likelihood(&logits, &[1, 3, 1]).unwrap();
            assert!(ll <= 0.0 && ll.is_finite());
        }
    }
}
