//! Dense matrix kernels. The fast paths go through `matrixmultiply`; the
//! naive triple loops stay as an independent reference.

use super::Real;

/// Strided `c = a·b + beta·c` for one element type.
pub trait Gemm: Sized {
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_gemm {
    ($t:ty, $f:path) => {
        impl Gemm for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: the asserted lengths cover every index reachable
                // through the given row/column strides for an m×k, k×n and
                // m×n row-major (or transposed-view) operand.
                unsafe {
                    $f(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_gemm!(f32, matrixmultiply::sgemm);
impl_gemm!(f64, matrixmultiply::dgemm);

/// `out = a[r×k] · b[k×c]` (overwrites `out`).
pub fn gemm<S: Real>(a: &[S], b: &[S], out: &mut [S], r: usize, k: usize, c: usize) {
    S::gemm_strided(r, k, c, a, (k as isize, 1), b, (c as isize, 1), S::zero(), out);
}

/// `out += g[r×c] · b[k×c]ᵀ`.
pub fn gemm_nt<S: Real>(g: &[S], b: &[S], out: &mut [S], r: usize, c: usize, k: usize) {
    S::gemm_strided(r, c, k, g, (c as isize, 1), b, (1, c as isize), S::one(), out);
}

/// `out += a[r×k]ᵀ · g[r×c]`.
pub fn gemm_tn<S: Real>(a: &[S], g: &[S], out: &mut [S], r: usize, k: usize, c: usize) {
    S::gemm_strided(k, r, c, a, (1, k as isize), g, (c as isize, 1), S::one(), out);
}

/// Reference `out += a[r×k] · b[k×c]` by explicit loops.
pub fn naive_gemm<S: Real>(a: &[S], b: &[S], out: &mut [S], r: usize, k: usize, c: usize) {
    for i in 0..r {
        for j in 0..c {
            let mut acc = S::zero();
            for p in 0..k {
                acc = acc + a[i * k + p] * b[p * c + j];
            }
            out[i * c + j] = out[i * c + j] + acc;
        }
    }
}

pub fn transpose_into<S: Real>(src: &[S], dst: &mut [S], r: usize, c: usize) {
    for i in 0..r {
        for j in 0..c {
            dst[j * r + i] = src[i * c + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fast_paths_agree_with_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(r, k, c) in &[(1, 1, 1), (3, 5, 2), (17, 9, 33), (68, 16, 68)] {
            let a = rand_vec(&mut rng, r * k);
            let b = rand_vec(&mut rng, k * c);
            let mut fast = vec![0.0; r * c];
            gemm(&a, &b, &mut fast, r, k, c);
            let mut slow = vec![0.0; r * c];
            naive_gemm(&a, &b, &mut slow, r, k, c);
            assert!(fast.iter().zip(&slow).all(|(x, y)| (x - y).abs() < 1e-12));

            // g·bᵀ and aᵀ·g against explicit transposes
            let g = rand_vec(&mut rng, r * c);
            let mut bt = vec![0.0; c * k];
            transpose_into(&b, &mut bt, k, c);
            let mut nt = vec![0.0; r * k];
            gemm_nt(&g, &b, &mut nt, r, c, k);
            let mut nt_ref = vec![0.0; r * k];
            naive_gemm(&g, &bt, &mut nt_ref, r, c, k);
            assert!(nt.iter().zip(&nt_ref).all(|(x, y)| (x - y).abs() < 1e-12));

            let mut at = vec![0.0; k * r];
            transpose_into(&a, &mut at, r, k);
            let mut tn = vec![0.0; k * c];
            gemm_tn(&a, &g, &mut tn, r, k, c);
            let mut tn_ref = vec![0.0; k * c];
            naive_gemm(&at, &g, &mut tn_ref, k, r, c);
            assert!(tn.iter().zip(&tn_ref).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}
