//! Synthetic 2D-style datasets and the held-out split.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Dataset;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "shape")]
pub enum Shape {
    /// `k` isotropic Gaussians with centers on a circle in the first two
    /// coordinates, adjacent centers `separation` apart.
    Blobs { k: usize, separation: f64, std: f64 },
    Moons { noise: f64 },
    Spiral { noise: f64 },
    Checkerboard,
}

impl Shape {
    pub fn parse(name: &str, k: Option<usize>, separation: Option<f64>, std: Option<f64>, noise: Option<f64>) -> Result<Self> {
        match name {
            "blobs" => Ok(Shape::Blobs {
                k: k.unwrap_or(8),
                separation: separation.unwrap_or(10.0),
                std: std.unwrap_or(1.0),
            }),
            "moons" => Ok(Shape::Moons { noise: noise.unwrap_or(0.1) }),
            "spiral" => Ok(Shape::Spiral { noise: noise.unwrap_or(0.1) }),
            "checkerboard" => Ok(Shape::Checkerboard),
            other => Err(Error::Usage(format!(
                "unknown shape '{other}' (expected blobs, moons, spiral or checkerboard)"
            ))),
        }
    }
}

/// Generated points with the generator's component label for each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dim: usize,
    pub points: Vec<f64>,
    /// Blob index for blobs, moon index for moons, cell parity for the
    /// checkerboard, arm for the spiral.
    pub labels: Vec<usize>,
    pub num_labels: usize,
}

impl Generated {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Dataset with the generator labels attached.
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_flat(self.points.clone(), self.dim)?.with_labels(self.labels.clone(), self.num_labels)
    }
}

/// Blob centers: a circle of radius `separation / (2 sin(π/k))` so that
/// neighbouring centers are `separation` apart.
pub fn blob_centers(k: usize, separation: f64, dim: usize) -> Vec<f64> {
    let mut centers = vec![0.0; k * dim];
    if k == 1 {
        return centers;
    }
    let radius = separation / (2.0 * (PI / k as f64).sin());
    for c in 0..k {
        let angle = 2.0 * PI * c as f64 / k as f64;
        centers[c * dim] = radius * angle.cos();
        if dim > 1 {
            centers[c * dim + 1] = radius * angle.sin();
        }
    }
    centers
}

pub fn generate(shape: &Shape, n: usize, dim: usize, seed: u64) -> Result<Generated> {
    if n == 0 {
        return Err(Error::Usage("need at least one point".into()));
    }
    if dim == 0 {
        return Err(Error::Usage("dimension must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let num_labels = match *shape {
        Shape::Blobs { k, separation, std } => {
            if k == 0 {
                return Err(Error::Usage("blobs need at least one component".into()));
            }
            let centers = blob_centers(k, separation, dim);
            for i in 0..n {
                // Round-robin keeps component sizes within one of each other.
                let c = i % k;
                for d in 0..dim {
                    points.push(centers[c * dim + d] + std * rng.normal());
                }
                labels.push(c);
            }
            k
        }
        Shape::Moons { noise } => {
            for i in 0..n {
                let moon = i % 2;
                let a = PI * rng.uniform();
                let (x, y) = if moon == 0 {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                push_planar(&mut points, &mut rng, dim, x, y, noise);
                labels.push(moon);
            }
            2
        }
        Shape::Spiral { noise } => {
            for i in 0..n {
                let arm = i % 2;
                let r = rng.uniform().sqrt() * 3.0;
                let theta = PI * r + PI * arm as f64;
                push_planar(&mut points, &mut rng, dim, r * theta.cos(), r * theta.sin(), noise);
                labels.push(arm);
            }
            2
        }
        Shape::Checkerboard => {
            for _ in 0..n {
                // Four-by-four board on [-2, 2]^2, keep the even cells.
                let (cx, cy) = loop {
                    let cx = rng.below(4);
                    let cy = rng.below(4);
                    if (cx + cy) % 2 == 0 {
                        break (cx, cy);
                    }
                };
                let x = cx as f64 - 2.0 + rng.uniform();
                let y = cy as f64 - 2.0 + rng.uniform();
                push_planar(&mut points, &mut rng, dim, x, y, 0.0);
                labels.push(cx / 2 * 2 + cy / 2);
            }
            4
        }
    };
    Ok(Generated {
        dim,
        points,
        labels,
        num_labels,
    })
}

fn push_planar(points: &mut Vec<f64>, rng: &mut Rng, dim: usize, x: f64, y: f64, noise: f64) {
    points.push(x + noise * rng.normal());
    if dim > 1 {
        points.push(y + noise * rng.normal());
    }
    for _ in 2..dim {
        points.push(noise * rng.normal());
    }
}

/// Randomly hold out `fraction` of the rows (at least one when `n > 1`).
/// Returns `(train, heldout)` index lists, each sorted.
pub fn heldout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Argument(format!("held-out fraction must lie in [0, 1), got {fraction}")));
    }
    let mut perm = Rng::new(seed).split("heldout").permutation(n);
    let n_held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut held = perm.split_off(n - n_held);
    perm.sort_unstable();
    held.sort_unstable();
    Ok((perm, held))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_structure() {
        let g = generate(&Shape::Blobs { k: 8, separation: 10.0, std: 1.0 }, 8000, 2, 1).unwrap();
        assert_eq!(g.len(), 8000);
        assert_eq!(g.points.len(), 16000);
        for c in 0..8 {
            assert_eq!(g.labels.iter().filter(|&&l| l == c).count(), 1000);
        }
        let centers = blob_centers(8, 10.0, 2);
        let d = ((centers[0] - centers[2]).powi(2) + (centers[1] - centers[3]).powi(2)).sqrt();
        assert!((d - 10.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_single_row() {
        let s = Shape::Moons { noise: 0.1 };
        assert_eq!(generate(&s, 50, 2, 3).unwrap(), generate(&s, 50, 2, 3).unwrap());
        assert_eq!(generate(&Shape::Checkerboard, 1, 2, 0).unwrap().len(), 1);
        assert!(Shape::parse("torus", None, None, None, None).is_err());
        assert!(generate(&s, 0, 2, 0).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let (train, held) = heldout_split(100, 0.2, 4).unwrap();
        assert_eq!((train.len(), held.len()), (80, 20));
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
