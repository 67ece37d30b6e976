use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors
/// as columns of a row-major `n × n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + src];
        }
    }
    (values, vectors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `m` rows of `(pc1, pc2)`.
    pub coords: Vec<[f64; 2]>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// The two principal axes, each of length `d`.
    pub axes: [Vec<f64>; 2],
}

impl Projection {
    pub fn explained_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        (self.eigenvalues[0] + self.eigenvalues[1]) / total
    }
}

/// Top-two principal components of the mean-centered rows. Each axis is
/// signed so its largest-magnitude loading is positive.
pub fn project_2d(rows: &[Vec<f64>]) -> Result<Projection> {
    let m = rows.len();
    if m < 3 {
        return Err(contract(format!("projection needs at least 3 rows, got {m}")));
    }
    let d = rows[0].len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(contract("projection rows must share a width of at least 2"));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, mu)| x - mu).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= m as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d);
    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    if values[1] <= 1e-12 * scale || values[0] <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "prompt rows span fewer than 2 dimensions (eigenvalues {:.3e}, {:.3e})",
            values[0], values[1]
        )));
    }
    let axis = |c: usize| {
        let mut a: Vec<f64> = (0..d).map(|r| vectors[r * d + c]).collect();
        let lead = a
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, x) } else { best });
        if lead.1 < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
        }
        a
    };
    let axes = [axis(0), axis(1)];
    let coords = centered
        .iter()
        .map(|r| {
            let dot = |a: &[f64]| r.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect();
    Ok(Projection {
        coords,
        eigenvalues: values,
        axes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_rows(seed: u64, m: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn eigenvalues_match_nalgebra() {
        let rows = random_rows(3, 20, 12);
        let n = 12;
        let mut a = vec![0.0; n * n];
        for r in &rows {
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] += r[i] * r[j];
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(&a, n);
        let oracle = nalgebra::DMatrix::from_row_slice(n, n, &a).symmetric_eigen();
        let mut expect: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        expect.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in vals.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-9 * expect[0], "{x} vs {y}");
        }
        // A v = λ v for every column
        for c in 0..n {
            for r in 0..n {
                let av: f64 = (0..n).map(|k| a[r * n + k] * vecs[k * n + c]).sum();
                assert!((av - vals[c] * vecs[r * n + c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn centered_2d_input_keeps_distances() {
        let mut rows = random_rows(4, 10, 2);
        let mean: Vec<f64> = (0..2).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 10.0).collect();
        rows.iter_mut().for_each(|r| r.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m));
        let p = project_2d(&rows).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let din = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let c = (&p.coords[i], &p.coords[j]);
                let dout = ((c.0[0] - c.1[0]).powi(2) + (c.0[1] - c.1[1]).powi(2)).sqrt();
                assert!((din - dout).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn duplicated_rows_get_duplicated_coords() {
        let mut rows = random_rows(5, 6, 8);
        rows.extend(rows.clone());
        let p = project_2d(&rows).unwrap();
        for i in 0..6 {
            assert_eq!(p.coords[i], p.coords[i + 6]);
        }
    }

    #[test]
    fn reconstruction_error_is_the_eigen_tail() {
        let rows = random_rows(6, 20, 64);
        let p = project_2d(&rows).unwrap();
        let m = rows.len() as f64;
        let mean: Vec<f64> = (0..64).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m).collect();
        let mut err = 0.0;
        for (r, c) in rows.iter().zip(&p.coords) {
            for j in 0..64 {
                let recon = mean[j] + c[0] * p.axes[0][j] + c[1] * p.axes[1][j];
                err += (r[j] - recon).powi(2);
            }
        }
        let tail: f64 = p.eigenvalues[2..].iter().sum();
        assert!((err / m - tail).abs() < 1e-6, "{} vs {tail}", err / m);
    }

    #[test]
    fn sign_convention_and_degenerate_input() {
        let p = project_2d(&random_rows(7, 9, 5)).unwrap();
        for axis in &p.axes {
            let lead = axis.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(lead > 0.0);
        }
        let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(project_2d(&line), Err(Error::DegenerateGeometry(_))));
        assert!(project_2d(&line[..2]).is_err());
    }
}
