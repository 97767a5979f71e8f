//! Weighted Lloyd's algorithm with k-means++ seeding.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::gaussian::sq_dist;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Weighted sum of squared distances to the assigned centroid.
    pub cost: f64,
    /// Cost after every assignment step, in order.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &a in &self.assignment {
            counts[a] += 1;
        }
        counts
    }
}

/// Unweighted k-means over `n x dim` row-major points.
pub fn kmeans(points: &[f64], dim: usize, k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    let n = validate(points, dim)?;
    weighted_kmeans(points, dim, &vec![1.0; n], k, opts)
}

fn validate(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Argument(format!(
            "{} values do not form rows of width {dim}",
            points.len()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("k-means input contains non-finite values".into()));
    }
    Ok(points.len() / dim)
}

/// k-means where point `i` counts with mass `weights[i]`.
pub fn weighted_kmeans(
    points: &[f64],
    dim: usize,
    weights: &[f64],
    k: usize,
    opts: &KMeansOptions,
) -> Result<KMeansResult> {
    let n = validate(points, dim)?;
    check_len(weights.len(), n, "k-means weights")?;
    if k == 0 || k > n {
        return Err(Error::Argument(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument("k-means weights must be non-negative".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = Rng::new(opts.seed);
    let mut centroids = plus_plus_seeds(points, dim, weights, k, &mut rng);

    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut cost_history = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        assign(points, dim, &mut centroids, weights, &mut assignment, &mut dists);
        cost_history.push(weighted_cost(&dists, weights));

        let mut sums = vec![0.0; k * dim];
        let mut mass = vec![0.0; k];
        let mut members = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            let w = weights[i];
            mass[c] += w;
            members[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += w * v;
            }
        }
        // clusters whose members all carry zero weight fall back to a plain mean
        for c in 0..k {
            if mass[c] == 0.0 && members[c] > 0 {
                for i in (0..n).filter(|&i| assignment[i] == c) {
                    for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                        *s += v;
                    }
                }
                mass[c] = members[c] as f64;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let old = &mut centroids[c * dim..(c + 1) * dim];
            let mut moved = 0.0;
            for (o, s) in old.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let new = s / mass[c];
                moved += (new - *o) * (new - *o);
                *o = new;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < opts.tol {
            break;
        }
    }
    assign(points, dim, &mut centroids, weights, &mut assignment, &mut dists);
    let cost = weighted_cost(&dists, weights);
    Ok(KMeansResult {
        dim,
        centroids,
        assignment,
        cost,
        cost_history,
        iterations,
    })
}

fn weighted_cost(dists: &[f64], weights: &[f64]) -> f64 {
    dists.iter().zip(weights).map(|(d, w)| d * w).sum()
}

/// D²-weighted seeding; the first seed is drawn by mass alone.
fn plus_plus_seeds(points: &[f64], dim: usize, weights: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let first = rng.weighted_index(weights).unwrap_or_else(|| rng.below(n));
    chosen[first] = true;
    let mut centroids = row(first).to_vec();
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let scores: Vec<f64> = nearest.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = rng
            .weighted_index(&scores)
            .unwrap_or_else(|| (0..n).find(|&i| !chosen[i]).expect("k <= n"));
        chosen[next] = true;
        centroids.extend_from_slice(row(next));
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(row(i), row(next)));
        }
    }
    centroids
}

/// Nearest-centroid assignment (ties to the lower index), then repair of
/// empty clusters: an empty cluster is reseeded at the point farthest from
/// its own centroid, taken from a cluster that has members to spare.
pub(crate) fn assign(
    points: &[f64],
    dim: usize,
    centroids: &mut [f64],
    weights: &[f64],
    assignment: &mut [usize],
    dists: &mut [f64],
) {
    let n = points.len() / dim;
    let k = centroids.len() / dim;
    for i in 0..n {
        let p = &points[i * dim..(i + 1) * dim];
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
            if d < best.0 {
                best = (d, c);
            }
        }
        assignment[i] = best.1;
        dists[i] = best.0;
    }
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut donor = None;
        for i in 0..n {
            if counts[assignment[i]] < 2 {
                continue;
            }
            // weight breaks distance ties so heavier points move first
            let key = (dists[i], weights[i]);
            if donor.map_or(true, |(_, best): (usize, (f64, f64))| key > best) {
                donor = Some((i, key));
            }
        }
        let Some((i, _)) = donor else { break };
        counts[assignment[i]] -= 1;
        counts[empty] += 1;
        assignment[i] = empty;
        dists[i] = 0.0;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}
