//! Seed matching: sample two deterministic models from identical noise and
//! compare paired distances against a random pairing.

use serde::{Deserialize, Serialize};

use crate::ensemble::{sample, SampleSet, SamplerConfig, VelocityField};
use crate::error::{Error, Result};
use crate::flow::Schedule;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMatch {
    /// Mean distance between samples drawn from the same noise.
    pub matched_mean_dist: f64,
    /// Mean distance under a random permutation pairing.
    pub random_mean_dist: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Score two sample sets whose row `i` came from the same starting noise.
pub fn seed_match_sets(a: &SampleSet, b: &SampleSet, rng: &mut Rng) -> Result<SeedMatch> {
    if a.dim != b.dim {
        return Err(Error::shape(a.dim, b.dim, "seed-matched sample dimension"));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Argument(format!(
            "seed matching needs two equal, nonempty sample sets, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let matched = (0..n).map(|i| dist(a.point(i), b.point(i))).sum::<f64>() / n as f64;
    let perm = rng.permutation(n);
    let random = (0..n).map(|i| dist(a.point(i), b.point(perm[i]))).sum::<f64>() / n as f64;
    Ok(SeedMatch {
        matched_mean_dist: matched,
        random_mean_dist: random,
    })
}

/// Draw `n` samples from each model with the same sampler seed and score
/// the pairing.
pub fn seed_match_score(
    model_a: &dyn VelocityField,
    model_b: &dyn VelocityField,
    n: usize,
    sampler: &SamplerConfig,
    schedule: &Schedule,
    rng: &mut Rng,
) -> Result<SeedMatch> {
    if model_a.dim() != model_b.dim() {
        return Err(Error::Config(format!(
            "models have dimensions {} and {}",
            model_a.dim(),
            model_b.dim()
        )));
    }
    let a = sample(model_a, n, sampler, schedule)?;
    let b = sample(model_b, n, sampler, schedule)?;
    seed_match_sets(&a, &b, rng)
}
