//! Seeded k-means with k-means++ initialization and independent restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Centroid movement, relative to the RMS norm of the data, below which
/// Lloyd iterations stop.
pub const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per point, canonicalized by descending size.
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center; equidistant ties go to the lower index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centers[0]));
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn update_centers(points: &[&[f64]], assignments: &[usize], centers: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centers.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for ((c, s), &cnt) in centers.iter_mut().zip(sums).zip(&counts) {
        // an empty cluster keeps its previous center
        if cnt > 0 {
            *c = s.into_iter().map(|x| x / cnt as f64).collect();
        }
    }
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster so every cluster ends non-empty.
fn fill_empty(points: &[&[f64]], assignments: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, (p, &a)) in points.iter().zip(assignments.iter()).enumerate() {
            if counts[a] > 1 {
                let d = sq_dist(p, &centers[a]);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
        }
        let (i, _) = best.expect("k <= n guarantees a donor cluster");
        assignments[i] = empty;
        update_centers(points, assignments, centers);
    }
}

fn lloyd(
    points: &[&[f64]],
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (Vec<usize>, Vec<Vec<f64>>, usize) {
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let previous = centers.clone();
        update_centers(points, &assignments, &mut centers);
        let shift = previous
            .iter()
            .zip(&centers)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (best, _) = nearest(p, &centers);
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        if !changed || shift < tol {
            break;
        }
    }
    fill_empty(points, &mut assignments, &mut centers);
    (assignments, centers, iterations)
}

/// Relabels clusters by descending size, ties by smallest member index.
pub fn canonicalize(assignments: &[usize], k: usize) -> Vec<usize> {
    let mut first = vec![usize::MAX; k];
    let mut size = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        size[a] += 1;
        first[a] = first[a].min(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    assignments.iter().map(|&a| relabel[a]).collect()
}

/// Clusters the rows of a row-major `n × dim` matrix into `k` groups.
///
/// Keeps the restart with the smallest within-cluster sum of squares;
/// earlier restarts win ties.
pub fn kmeans(
    data: &[f64],
    dim: usize,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> KMeansResult {
    assert!(dim > 0 && data.len().is_multiple_of(dim));
    let points: Vec<&[f64]> = data.chunks_exact(dim).collect();
    let n = points.len();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let rms = (data.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let tol = SHIFT_TOL * if rms > 0.0 { rms } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus(&points, k, &mut rng);
        let (assignments, centers, iterations) = lloyd(&points, init, max_iter, tol);
        let inertia: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centers[a]))
            .sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                assignments,
                centers,
                inertia,
                iterations,
            });
        }
    }
    let best = best.expect("at least one restart");
    let assignments = canonicalize(&best.assignments, k);
    let mut centers = vec![Vec::new(); k];
    for (&old, &new) in best.assignments.iter().zip(&assignments) {
        if centers[new].is_empty() {
            centers[new] = best.centers[old].clone();
        }
    }
    KMeansResult {
        assignments,
        centers,
        ..best
    }
}
