//! Disjoint K-way data partitions: two-stage feature k-means, or uniformly
//! random assignment as the i.i.d. baseline.

pub mod kmeans;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Dataset;
use crate::numerics::gaussian::sq_dist;
use crate::numerics::Rng;

pub use kmeans::{kmeans, weighted_kmeans, KMeansOptions, KMeansResult};

pub const DEFAULT_FINE_CENTROIDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    FeatureKmeans,
    Random,
}

impl PartitionMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "feature-kmeans" | "kmeans" => Ok(PartitionMode::FeatureKmeans),
            "random" => Ok(PartitionMode::Random),
            other => Err(Error::Argument(format!("unknown partition mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// Coarse clusters, one per expert.
    pub k: usize,
    /// Fine centroids of the first stage.
    pub m: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub mode: PartitionMode,
}

impl PartitionSpec {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            m: DEFAULT_FINE_CENTROIDS.max(k),
            max_iters: 100,
            tol: 1e-8,
            seed,
            mode: PartitionMode::FeatureKmeans,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::Argument(format!(
                "need 1 <= K <= N, got K = {} with N = {n}",
                self.k
            )));
        }
        if self.mode == PartitionMode::FeatureKmeans && !(self.k <= self.m && self.m <= n) {
            return Err(Error::Argument(format!(
                "need K <= M <= N, got K = {}, M = {}, N = {n}",
                self.k, self.m
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Cluster assignment plus the centroids that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    pub dim: usize,
    pub assignment: Vec<usize>,
    /// `k x dim`: mean of the points assigned to each cluster.
    pub coarse_centroids: Vec<f64>,
    /// `m x dim`; empty for random partitions.
    pub fine_centroids: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Partition {
    /// Build from an explicit assignment, computing centroids over `features`.
    pub fn from_assignment(features: &[f64], dim: usize, assignment: Vec<usize>, k: usize) -> Result<Self> {
        if dim == 0 || features.len() != assignment.len() * dim {
            return Err(Error::Argument("assignment does not match feature rows".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= k) {
            return Err(Error::Argument(format!("cluster {bad} out of range for K = {k}")));
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k * dim];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(&features[i * dim..(i + 1) * dim])
            {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c * dim..(c + 1) * dim] {
                    *s /= counts[c] as f64;
                }
            }
        }
        Ok(Self {
            k,
            dim,
            assignment,
            coarse_centroids: sums,
            fine_centroids: Vec::new(),
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn coarse_centroid(&self, c: usize) -> &[f64] {
        &self.coarse_centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// `dataset` with this partition attached as its labels.
    pub fn label(&self, dataset: Dataset) -> Result<Dataset> {
        dataset.with_labels(self.assignment.clone(), self.k)
    }
}

/// Fine k-means to `M` centroids, count-weighted k-means of those centroids
/// to `K`, then every point goes to its nearest coarse centroid.
pub fn two_stage_partition(features: &[f64], dim: usize, spec: &PartitionSpec) -> Result<Partition> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::Argument("feature matrix has ragged rows".into()));
    }
    let n = features.len() / dim;
    spec.validate(n)?;
    if spec.mode == PartitionMode::Random {
        let assignment = random_assignment(n, spec.k, spec.seed)?;
        return Partition::from_assignment(features, dim, assignment, spec.k);
    }
    let opts = KMeansOptions {
        seed: spec.seed,
        max_iters: spec.max_iters,
        tol: spec.tol,
    };
    let fine = kmeans(features, dim, spec.m, &opts)?;
    let coarse_centroids = if spec.m == spec.k {
        fine.centroids.clone()
    } else {
        let counts: Vec<f64> = fine.counts().into_iter().map(|c| c as f64).collect();
        let coarse_opts = KMeansOptions {
            seed: Rng::new(spec.seed).split("coarse").next_u64(),
            ..opts
        };
        weighted_kmeans(&fine.centroids, dim, &counts, spec.k, &coarse_opts)?.centroids
    };

    let mut centroids = coarse_centroids;
    let mut assignment = vec![0; n];
    let mut dists = vec![0.0; n];
    kmeans::assign(features, dim, &mut centroids, &vec![1.0; n], &mut assignment, &mut dists);
    let mut partition = Partition::from_assignment(features, dim, assignment, spec.k)?;
    partition.fine_centroids = fine.centroids;
    Ok(partition)
}

/// I.i.d. uniform assignment; any cluster left empty takes a random point
/// from a cluster that can spare one.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    let assignment = random_assignment(n, k, seed)?;
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    Ok(Partition {
        k,
        dim: 0,
        assignment,
        coarse_centroids: Vec::new(),
        fine_centroids: Vec::new(),
        counts,
    })
}

fn random_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = Rng::new(seed);
    let mut assignment: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        loop {
            let i = rng.below(n);
            if counts[assignment[i]] > 1 {
                counts[assignment[i]] -= 1;
                assignment[i] = empty;
                counts[empty] += 1;
                break;
            }
        }
    }
    Ok(assignment)
}

/// Index of the nearest row of `centroids` (ties to the lower index).
pub fn nearest_centroid(point: &[f64], centroids: &[f64]) -> usize {
    let dim = point.len();
    let mut best = (f64::INFINITY, 0);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, row);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}
