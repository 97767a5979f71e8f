//! Deterministic ODE sampling from `t = 1` (noise) down to `t_min`.

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, Strategy, VelocityField};
use crate::error::{Error, Result};
use crate::flow::{Schedule, DEFAULT_T_MIN};
use crate::numerics::Rng;

pub const DEFAULT_SAMPLING_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Heun,
}

impl Integrator {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "euler" => Ok(Integrator::Euler),
            "heun" => Ok(Integrator::Heun),
            other => Err(Error::Usage(format!("unknown integrator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub integrator: Integrator,
    /// End of the uniform time grid. When positive, the final state is
    /// mapped to its implied clean point with one more evaluation.
    pub t_min: f64,
    pub seed: u64,
    pub record_trajectories: bool,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            integrator: Integrator::Euler,
            t_min: DEFAULT_T_MIN,
            seed,
            record_trajectories: false,
        }
    }

    /// The strictly decreasing grid `1 = t_0 > … > t_steps = t_min`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::Argument("sampler needs at least one step".into()));
        }
        if !(0.0..1.0).contains(&self.t_min) {
            return Err(Error::Argument(format!("sampler t_min must lie in [0, 1), got {}", self.t_min)));
        }
        let dt = (1.0 - self.t_min) / self.steps as f64;
        Ok((0..=self.steps)
            .map(|j| if j == self.steps { self.t_min } else { 1.0 - dt * j as f64 })
            .collect())
    }
}

/// One recorded state of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    /// `n x dim`, row-major.
    pub points: Vec<f64>,
    /// Empty unless trajectories were requested.
    pub trajectories: Vec<Vec<TrajectoryPoint>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Starting noise of trajectory `i`. Each trajectory has its own stream, so
/// two samplers with the same seed start from identical noise regardless of
/// how many samples each draws.
pub fn initial_noise(seed: u64, i: usize, dim: usize) -> Vec<f64> {
    Rng::new(seed).split("noise").split_index(i as u64).normal_vec(dim)
}

fn check_finite(x: &[f64], step: usize, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Sampling { step, t })
    }
}

/// Integrate one trajectory of `field` from `start` at `t = 1`. Returns the
/// final point and, when requested, the recorded states.
pub fn integrate(
    field: &mut impl FnMut(&[f64], f64) -> Result<Vec<f64>>,
    start: &[f64],
    config: &SamplerConfig,
    schedule: &Schedule,
) -> Result<(Vec<f64>, Vec<TrajectoryPoint>)> {
    let grid = config.grid()?;
    let mut x = start.to_vec();
    let mut traj = Vec::new();
    if config.record_trajectories {
        traj.push(TrajectoryPoint {
            step: 0,
            t: grid[0],
            state: x.clone(),
        });
    }
    for j in 0..config.steps {
        let (t, t_next) = (grid[j], grid[j + 1]);
        let dt = t - t_next;
        let u = field(&x, t)?;
        check_finite(&u, j, t)?;
        match config.integrator {
            Integrator::Euler => {
                for (xi, ui) in x.iter_mut().zip(&u) {
                    *xi -= dt * ui;
                }
            }
            Integrator::Heun => {
                let pred: Vec<f64> = x.iter().zip(&u).map(|(xi, ui)| xi - dt * ui).collect();
                let u2 = field(&pred, t_next)?;
                check_finite(&u2, j, t_next)?;
                for ((xi, a), b) in x.iter_mut().zip(&u).zip(&u2) {
                    *xi -= 0.5 * dt * (a + b);
                }
            }
        }
        check_finite(&x, j + 1, t_next)?;
        if config.record_trajectories {
            traj.push(TrajectoryPoint {
                step: j + 1,
                t: t_next,
                state: x.clone(),
            });
        }
    }
    if config.t_min > 0.0 {
        let u = field(&x, config.t_min)?;
        x = schedule.implied_x0(&x, &u, config.t_min);
        check_finite(&x, config.steps, config.t_min)?;
    }
    Ok((x, traj))
}

/// Integrate `n` trajectories of `field(i, x, t)`, where `i` is the
/// trajectory index, each starting from its own noise draw.
pub fn sample_field(
    mut field: impl FnMut(usize, &[f64], f64) -> Result<Vec<f64>>,
    dim: usize,
    n: usize,
    config: &SamplerConfig,
    schedule: &Schedule,
) -> Result<SampleSet> {
    config.grid()?;
    let mut points = Vec::with_capacity(n * dim);
    let mut trajectories = Vec::new();
    for i in 0..n {
        let start = initial_noise(config.seed, i, dim);
        let (x, traj) = integrate(&mut |x, t| field(i, x, t), &start, config, schedule)?;
        points.extend_from_slice(&x);
        if config.record_trajectories {
            trajectories.push(traj);
        }
    }
    Ok(SampleSet {
        dim,
        points,
        trajectories,
    })
}

/// Sample a single model.
pub fn sample(field: &dyn VelocityField, n: usize, config: &SamplerConfig, schedule: &Schedule) -> Result<SampleSet> {
    sample_field(|_, x, t| field.velocity(x, t), field.dim(), n, config, schedule)
}

/// Sample an ensemble under `strategy`. Stochastic selection draws from a
/// per-trajectory stream separate from the noise. Oracle selection takes
/// trajectory `i`'s label from `labels[i % labels.len()]`.
pub fn sample_ensemble(
    ensemble: &Ensemble,
    strategy: &Strategy,
    labels: Option<&[usize]>,
    n: usize,
    config: &SamplerConfig,
    schedule: &Schedule,
) -> Result<SampleSet> {
    strategy.validate(Some(ensemble.num_experts()))?;
    let labels = match (strategy, labels) {
        (Strategy::Oracle, None) | (Strategy::Oracle, Some([])) => {
            return Err(Error::Usage("the oracle strategy needs cluster labels".into()))
        }
        (_, l) => l.unwrap_or(&[]),
    };
    let policy = Rng::new(config.seed).split("policy");
    let mut streams: Vec<Rng> = (0..n).map(|i| policy.split_index(i as u64)).collect();
    sample_field(
        |i, x, t| {
            let label = (!labels.is_empty()).then(|| labels[i % labels.len()]);
            ensemble.velocity(strategy, x, t, &mut streams[i], label)
        },
        ensemble.dim(),
        n,
        config,
        schedule,
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ensemble::AnalyticalMarginal;
    use crate::flow::{AnalyticalFlow, Dataset};

    #[test]
    fn constant_field_two_steps() {
        let cfg = SamplerConfig {
            steps: 2,
            t_min: 0.0,
            ..SamplerConfig::new(0)
        };
        assert_eq!(cfg.grid().unwrap(), vec![1.0, 0.5, 0.0]);
        let (x, _) = integrate(&mut |_, _| Ok(vec![1.0]), &[1.0], &cfg, &Schedule::linear()).unwrap();
        assert!(x[0].abs() < 1e-15);
    }

    #[test]
    fn single_point_dataset_collapses_to_it() {
        let ds = Dataset::from_flat(vec![1.5, -0.5], 2).unwrap();
        let field = AnalyticalMarginal(Arc::new(AnalyticalFlow::new(ds, Schedule::linear())));
        let out = sample(&field, 20, &SamplerConfig::new(4), &Schedule::linear()).unwrap();
        for i in 0..20 {
            let p = out.point(i);
            assert!((p[0] - 1.5).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn heun_is_exact_on_linear_fields() {
        // u = x  ⇒  x(t) = x_1 e^{t − 1}; Heun error is small, Euler larger.
        let cfg = SamplerConfig {
            steps: 20,
            t_min: 0.0,
            integrator: Integrator::Heun,
            ..SamplerConfig::new(1)
        };
        let out = sample_field(|_, x, _| Ok(x.to_vec()), 1, 1, &cfg, &Schedule::linear()).unwrap();
        let x1 = initial_noise(1, 0, 1)[0];
        let exact = x1 * (-1.0f64).exp();
        assert!((out.points[0] - exact).abs() < 1e-3 * x1.abs());
        let euler = sample_field(|_, x, _| Ok(x.to_vec()), 1, 1, &SamplerConfig { integrator: Integrator::Euler, ..cfg }, &Schedule::linear()).unwrap();
        assert!((euler.points[0] - exact).abs() > (out.points[0] - exact).abs());
    }

    #[test]
    fn divergence_reports_the_step() {
        let cfg = SamplerConfig { steps: 10, ..SamplerConfig::new(0) };
        let err = sample_field(
            |_, _, t| Ok(vec![if t < 0.75 { f64::NAN } else { 0.0 }]),
            1,
            1,
            &cfg,
            &Schedule::linear(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Sampling { step: 3, .. }), "{err:?}");
    }

    #[test]
    fn equal_seeds_give_bit_equal_trajectories() {
        let cfg = SamplerConfig {
            steps: 5,
            record_trajectories: true,
            ..SamplerConfig::new(8)
        };
        let f = |_: usize, x: &[f64], t: f64| Ok(x.iter().map(|v| -v * t).collect());
        let a = sample_field(f, 3, 4, &cfg, &Schedule::linear()).unwrap();
        let b = sample_field(f, 3, 4, &cfg, &Schedule::linear()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectories[0].len(), 6);
        // The noise of trajectory i does not depend on n.
        let c = sample_field(f, 3, 2, &cfg, &Schedule::linear()).unwrap();
        assert_eq!(&a.points[..6], &c.points[..]);
    }

    #[test]
    fn oracle_needs_labels() {
        let ds = Dataset::from_flat(vec![0.0, 1.0], 1).unwrap().with_labels(vec![0, 1], 2).unwrap();
        let ens = Ensemble::analytical(Arc::new(AnalyticalFlow::new(ds, Schedule::linear()))).unwrap();
        let cfg = SamplerConfig::new(0);
        assert!(matches!(
            sample_ensemble(&ens, &Strategy::Oracle, None, 2, &cfg, &Schedule::linear()),
            Err(Error::Usage(_))
        ));
        assert!(sample_ensemble(&ens, &Strategy::Oracle, Some(&[1]), 2, &cfg, &Schedule::linear()).is_ok());
    }
}
