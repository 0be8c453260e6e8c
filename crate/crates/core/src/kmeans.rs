//! Lloyd's k-means with deterministic farthest-point seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 50;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

/// First centroid is drawn uniformly from `seed`; each following centroid is
/// the point farthest from all chosen ones.
fn farthest_point_seeds(points: &[&[f64]], k: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut centroids = points[first].to_vec();
    let mut min_dist: Vec<f64> = points.iter().map(|p| squared_distance(p, points[first])).collect();
    while centroids.len() / dim < k {
        let (next, _) = min_dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        centroids.extend_from_slice(points[next]);
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, points[next]));
        }
    }
    centroids
}

/// Runs k-means on `points` (each of length `dim`). Requires `points.len() >= k >= 1`.
pub fn kmeans(points: &[&[f64]], k: usize, dim: usize, seed: u64) -> KMeansResult {
    assert!(k >= 1 && points.len() >= k, "k-means needs at least k points");
    let mut centroids = farthest_point_seeds(points, k, dim, seed);
    let mut assignment = vec![0usize; points.len()];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut wcss = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids, dim);
            *a = j;
            wcss += d;
        }
        wcss_history.push(wcss);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut max_shift: f64 = 0.0;
        for j in 0..k {
            // An empty cluster keeps its previous centroid.
            if counts[j] == 0 {
                continue;
            }
            let old = &mut centroids[j * dim..(j + 1) * dim];
            let mut shift = 0.0;
            for (c, s) in old.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                let new = s / counts[j] as f64;
                shift += (new - *c) * (new - *c);
                *c = new;
            }
            max_shift = max_shift.max(shift.sqrt());
        }
        if max_shift < SHIFT_TOLERANCE {
            break;
        }
    }

    KMeansResult {
        centroids,
        dim,
        wcss_history,
        iterations,
    }
}
