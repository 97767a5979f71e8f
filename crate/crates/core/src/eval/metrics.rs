//! Distribution distances between point sets: sliced Wasserstein and energy
//! distance. Both stand in for FID at desk scale.

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Row-major points of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("point dimension must be positive".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::shape(
                points.len().div_ceil(dim) * dim,
                points.len(),
                "point cloud values",
            ));
        }
        if points.is_empty() {
            return Err(Error::Argument("point cloud is empty".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point cloud contains a non-finite value".into()));
        }
        Ok(Self { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Sorted projections onto `direction`.
    fn project(&self, direction: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .rows()
            .map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect();
        out.sort_unstable_by(f64::total_cmp);
        out
    }
}

fn same_dim(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::shape(a.dim, b.dim, "point set dimension"));
    }
    Ok(())
}

/// 2-Wasserstein distance between two sorted 1D samples with uniform
/// weights, integrating the squared quantile difference exactly. Sizes may
/// differ.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u128, b.len() as u128);
    if n == 0 || m == 0 {
        return 0.0;
    }
    // Quantile breakpoints live on the grid 1/(n m), so the merge is exact
    // in integers.
    let total = (n * m) as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let mut acc = 0.0;
    while (i as u128) < n && (j as u128) < m {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += (next - prev) as f64 / total * d * d;
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc.sqrt()
}

/// Random unit vector in `dim` dimensions.
pub fn random_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = rng.normal_vec(dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Mean over `n_projections` random directions of the 1D 2-Wasserstein
/// distance between the projected sets.
pub fn sliced_wasserstein(a: &PointCloud, b: &PointCloud, n_projections: usize, rng: &mut Rng) -> Result<f64> {
    same_dim(a, b)?;
    if n_projections == 0 {
        return Err(Error::Argument("need at least one projection".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_direction(rng, a.dim);
        total += wasserstein_1d_sorted(&a.project(&dir), &b.project(&dir));
    }
    Ok(total / n_projections as f64)
}

fn mean_pair_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    let mut total = 0.0;
    for x in a.rows() {
        let mut row = 0.0;
        for y in b.rows() {
            row += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` over all empirical pairs (the
/// V-statistic, which is never negative up to rounding).
pub fn energy_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    same_dim(a, b)?;
    let cross = mean_pair_distance(a, b);
    let aa = mean_pair_distance(a, a);
    let bb = mean_pair_distance(b, b);
    Ok((2.0 * cross - aa - bb).max(0.0))
}
