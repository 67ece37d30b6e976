use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Seed that produced a clustering without empty clusters.
    pub seed: u64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = d.len() - 1;
            for (i, &w) in d.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Option<Clustering> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            *c = s.iter().map(|v| v / n as f64).collect();
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let mut counts = vec![0usize; k];
    assignments.iter().for_each(|&a| counts[a] += 1);
    if counts.contains(&0) {
        return None;
    }
    Some(Clustering {
        assignments,
        centroids,
        iterations,
        seed,
    })
}

/// k-means with k-means++ seeding. An empty cluster restarts with the next
/// seed, at most `max_retries` times.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, max_retries: usize) -> Result<Clustering> {
    if k == 0 || points.len() < k {
        return Err(contract(format!("k-means needs 1 <= k <= n, got k = {k}, n = {}", points.len())));
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(contract("k-means points must share one dimension"));
    }
    for attempt in 0..=max_retries as u64 {
        if let Some(c) = lloyd(points, k, seed + attempt, max_iter) {
            return Ok(c);
        }
    }
    Err(Error::DegenerateGeometry(format!(
        "k-means left a cluster empty after {max_retries} retries"
    )))
}
