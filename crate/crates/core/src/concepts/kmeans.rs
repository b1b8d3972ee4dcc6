//! Lloyd's algorithm with k-means++ seeding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::clusters::ClusterSummary;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }

    /// Centroids and member lists, activation statistics left empty.
    pub fn clusters(&self) -> Vec<ClusterSummary> {
        let mut members = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            members[c].push(i);
        }
        self.centroids
            .iter()
            .zip(members)
            .enumerate()
            .map(|(id, (c, m))| ClusterSummary::new(id, c.as_slice().to_vec(), m))
            .collect()
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    points.row(i).iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn nearest(points: &DMatrix<f64>, i: usize, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(points, i, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &DMatrix<f64>, k: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = points.nrows();
    let mut rng = stream_rng(seed, 0);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points.row(first).transpose()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // all remaining points coincide with a centroid
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[next] = true;
        let c = points.row(next).transpose();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Cluster the rows of `points` into `k` groups.
///
/// Stops when an assignment step changes no membership or after `max_iters`
/// assignment steps. A cluster that empties during an update is re-seeded at
/// the point farthest from its own centroid, which then joins that cluster.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("k-means needs at least one point".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let max_iters = max_iters.max(1);
    let d = points.ncols();
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(points, i, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            inertia += dist;
        }
        inertia_trace.push(inertia);
        if !changed {
            converged = true;
            break;
        }

        let mut sums = vec![DVector::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            sums[c] += points.row(i).transpose();
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = &sums[c] / counts[c] as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(points, a, &centroids[assignments[a]]);
                    let db = sq_dist(points, b, &centroids[assignments[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("k <= n leaves a cluster with spare members");
            counts[assignments[far]] -= 1;
            assignments[far] = c;
            counts[c] = 1;
            centroids[c] = points.row(far).transpose();
        }
    }

    Ok(Clustering {
        centroids,
        assignments,
        inertia_trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (DMatrix<f64>, [[f64; 2]; 3]) {
        let means = [[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let mut rng = stream_rng(seed, 1);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut values = Vec::new();
        for i in 0..300 {
            let m = means[i % 3];
            values.push(m[0] + noise.sample(&mut rng));
            values.push(m[1] + noise.sample(&mut rng));
        }
        (DMatrix::from_row_slice(300, 2, &values), means)
    }

    #[test]
    fn recovers_blob_means() {
        let (points, means) = blobs(1);
        let result = kmeans(&points, 3, 7, 100).unwrap();
        assert!(result.converged);
        for m in means {
            let closest = result
                .centroids
                .iter()
                .map(|c| (c[0] - m[0]).hypot(c[1] - m[1]))
                .fold(f64::INFINITY, f64::min);
            assert!(closest < 0.1, "{m:?}: {closest}");
        }
    }

    #[test]
    fn k_equals_n_is_exact() {
        let points = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0]);
        let result = kmeans(&points, 4, 3, 10).unwrap();
        assert_eq!(result.inertia(), 0.0);
        let mut seen = result.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn deterministic_given_seed() {
        let (points, _) = blobs(2);
        let a = kmeans(&points, 5, 11, 50).unwrap();
        let b = kmeans(&points, 5, 11, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_never_increases() {
        let (points, _) = blobs(3);
        for seed in 0..10 {
            let result = kmeans(&points, 8, seed, 100).unwrap();
            for w in result.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", result.inertia_trace);
            }
        }
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let points = DMatrix::from_row_slice(6, 1, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let result = kmeans(&points, 4, 5, 20).unwrap();
        for c in result.clusters() {
            assert!(!c.members.is_empty());
        }
    }

    #[test]
    fn invalid_k() {
        let points = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(kmeans(&points, 3, 0, 10).is_err());
        assert!(kmeans(&points, 0, 0, 10).is_err());
    }
}
