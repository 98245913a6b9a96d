//! Lloyd's k-means with k-means++ seeding.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const KMEANS_MAX_ITER: usize = 100;

fn nearest(z: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = (z - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_centers(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - &points[chosen[0]]).norm_squared()).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a center
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap_or(0),
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - &points[next]).norm_squared());
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Cluster labels in `0..k` for the columns of `z`; every cluster ends non-empty.
pub fn kmeans(z: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = z.ncols();
    if k == 0 || k > n {
        return invalid(format!("cannot form {k} clusters from {n} points"));
    }
    let points: Vec<DVector<f64>> = z.column_iter().map(|c| c.into_owned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(&points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];

    for _ in 0..KMEANS_MAX_ITER {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        let mut counts = vec![0usize; k];
        for &l in &next {
            counts[l] += 1;
        }
        // move the worst-fitted point from a cluster that can spare it
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .max_by(|&a, &b| {
                    let da = (&points[a] - &centers[next[a]]).norm_squared();
                    let db = (&points[b] - &centers[next[b]]).norm_squared();
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("k <= n leaves a cluster with two or more points");
            counts[next[donor]] -= 1;
            next[donor] = empty;
            counts[empty] = 1;
            centers[empty] = points[donor].clone();
        }
        let changed = next != labels;
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let mut sum = DVector::zeros(z.nrows());
            for (p, _) in points.iter().zip(&labels).filter(|(_, &l)| l == c) {
                sum += p;
            }
            *center = sum / counts[c] as f64;
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}
