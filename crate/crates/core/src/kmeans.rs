//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub assignment: Vec<usize>,
    pub inertia: T,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 100,
            max_iter: 300,
            seed: 0,
        }
    }
}

fn sq_dist<T: Scalar>(points: ArrayView2<T>, i: usize, c: &[T]) -> T {
    points
        .row(i)
        .iter()
        .zip(c)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

/// Clusters the rows of `points` into `k` groups, keeping the restart with
/// the lowest inertia. Clusters are renumbered by first appearance so the
/// output is canonical.
pub fn kmeans<T: Scalar>(points: ArrayView2<T>, k: usize, cfg: KMeansConfig) -> Result<KMeansResult<T>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let dim = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult<T>> = None;

    for _ in 0..cfg.restarts.max(1) {
        // k-means++ seeding
        let mut centers: Vec<Vec<T>> = Vec::with_capacity(k);
        let first = rng.random_range(0..n);
        centers.push(points.row(first).to_vec());
        let mut d2: Vec<T> = (0..n).map(|i| sq_dist(points, i, &centers[0])).collect();
        while centers.len() < k {
            let total: T = d2.iter().copied().sum();
            let pick = if total > T::zero() {
                let target = T::of(rng.random::<f64>()) * total;
                let mut acc = T::zero();
                let mut chosen = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    acc += w;
                    if acc > target {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.push(points.row(pick).to_vec());
            let c = centers.last().unwrap();
            for i in 0..n {
                let d = sq_dist(points, i, c);
                if d < d2[i] {
                    d2[i] = d;
                }
            }
        }

        let mut assignment = vec![0usize; n];
        for _ in 0..cfg.max_iter {
            let mut changed = false;
            for i in 0..n {
                let mut best_c = 0;
                let mut best_d = T::infinity();
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(points, i, center);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if assignment[i] != best_c {
                    assignment[i] = best_c;
                    changed = true;
                }
            }
            let mut sums = vec![vec![T::zero(); dim]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[assignment[i]] += 1;
                for (s, &x) in sums[assignment[i]].iter_mut().zip(points.row(i)) {
                    *s += x;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = T::one() / T::of_usize(counts[c]);
                    centers[c] = sums[c].iter().map(|&s| s * inv).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: T = (0..n)
            .map(|i| sq_dist(points, i, &centers[assignment[i]]))
            .sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult { assignment, inertia });
        }
    }

    let mut result = best.expect("at least one restart");
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for a in result.assignment.iter_mut() {
        if remap[*a] == usize::MAX {
            remap[*a] = next;
            next += 1;
        }
        *a = remap[*a];
    }
    Ok(result)
}
