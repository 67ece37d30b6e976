use crate::error::{contract, Result};
use crate::tensor::{Real, Tape, Var};

/// Multi-head scaled dot-product attention over every row of `x`.
///
/// Per head `i` (width `d/h`): `softmax(Q_i K_iᵀ / sqrt(d/h)) V_i`; heads are
/// concatenated and projected by `wo`. Returns the projected output and the
/// per-head attention maps.
pub fn multi_head_attention<S: Real>(
    tape: &mut Tape<S>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.shape(wq)[1];
    if heads == 0 || d % heads != 0 {
        return Err(contract(format!("{heads} heads do not divide model width {d}")));
    }
    let width = d / heads;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let scale = S::one() / S::lit(width as f64).sqrt();

    let mut outputs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * width, width)?,
                tape.slice_cols(k, h * width, width)?,
                tape.slice_cols(v, h * width, width)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale)?;
        let weights = tape.softmax_rows(logits)?;
        outputs.push(tape.matmul(weights, vh)?);
        maps.push(weights);
    }
    let joined = if heads == 1 { outputs[0] } else { tape.concat_cols(&outputs)? };
    let out = tape.matmul(joined, wo)?;
    Ok((out, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-row explicit weighted sum over all value rows.
    fn naive(x: &Tensor<f64>, wq: &Tensor<f64>, wk: &Tensor<f64>, wv: &Tensor<f64>, wo: &Tensor<f64>, heads: usize) -> Tensor<f64> {
        let (n, d) = (x.rows(), x.cols());
        let w = d / heads;
        let proj = |m: &Tensor<f64>| x.matmul(m).unwrap();
        let (q, k, v) = (proj(wq), proj(wk), proj(wv));
        let mut concat = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let mut logits = vec![0.0; n];
                for (j, l) in logits.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in 0..w {
                        dot += q.get(i, h * w + c) * k.get(j, h * w + c);
                    }
                    *l = dot / (w as f64).sqrt();
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for (j, l) in logits.iter().enumerate() {
                    let a = (l - m).exp() / z;
                    for c in 0..w {
                        concat[i * d + h * w + c] += a * v.get(j, h * w + c);
                    }
                }
            }
        }
        Tensor::matrix(n, d, concat).unwrap().matmul(wo).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for heads in [1, 2, 4] {
            let x = random(&mut rng, 5, 8);
            let ws: Vec<_> = (0..4).map(|_| random(&mut rng, 8, 8)).collect();
            let mut tape = Tape::inference();
            let xv = tape.constant(x.clone());
            let vars: Vec<_> = ws.iter().map(|w| tape.constant(w.clone())).collect();
            let (out, maps) = multi_head_attention(&mut tape, xv, vars[0], vars[1], vars[2], vars[3], heads).unwrap();
            let oracle = naive(&x, &ws[0], &ws[1], &ws[2], &ws[3], heads);
            assert!(tape.value(out).max_abs_diff(&oracle) < 1e-12);
            for m in maps {
                for i in 0..5 {
                    let s: f64 = tape.value(m).row_slice(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_row_identity_weights_return_input() {
        let x = Tensor::<f64>::from_f64(&[1, 4], &[0.5, -1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let id = tape.constant(Tensor::identity(4));
        let (out, maps) = multi_head_attention(&mut tape, xv, id, id, id, id, 1).unwrap();
        assert_eq!(tape.value(maps[0]).data(), &[1.0]);
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros(&[2, 6]));
        let w = tape.constant(Tensor::zeros(&[6, 6]));
        assert!(multi_head_attention(&mut tape, x, w, w, w, w, 4).is_err());
    }
}
