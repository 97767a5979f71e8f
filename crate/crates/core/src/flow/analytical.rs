//! Exact flows, posteriors and scores of the noised empirical distribution.
//!
//! For a discrete dataset `{x_0}` with weights `q`, the noised marginal is the
//! mixture `p_t(x_t) = Σ q(x_0) N(x_t; α_t x_0, σ_t² I)`. Every quantity here
//! is a posterior-weighted average over that mixture, normalized in log space
//! so that small `t` (tiny `σ_t`) does not underflow.

use crate::error::{check_len, Error, Result};
use crate::flow::{Dataset, Schedule};
use crate::numerics::gaussian::{lse_unchecked, sq_dist};

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct AnalyticalFlow {
    dataset: Dataset,
    schedule: Schedule,
    log_q: Vec<f64>,
    /// Member indices per cluster; a single cluster holding everything when
    /// the dataset carries no labels.
    clusters: Vec<Vec<usize>>,
}

/// Log-mass and posterior mean of a group of mixture components.
struct Moment {
    log_mass: f64,
    mean: Vec<f64>,
}

impl AnalyticalFlow {
    /// The dataset's labels, if any, define the partition `S_1..S_K`.
    pub fn new(dataset: Dataset, schedule: Schedule) -> Self {
        let log_q = dataset.weights().iter().map(|w| w.ln()).collect();
        let clusters = match dataset.labels() {
            Some(labels) => {
                let mut clusters = vec![Vec::new(); dataset.num_clusters()];
                for (i, &l) in labels.iter().enumerate() {
                    clusters[l].push(i);
                }
                clusters
            }
            None => vec![(0..dataset.len()).collect()],
        };
        Self {
            dataset,
            schedule,
            log_q,
            clusters,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn has_partition(&self) -> bool {
        self.dataset.labels().is_some()
    }

    fn check(&self, x_t: &[f64], t: f64) -> Result<()> {
        check_len(x_t.len(), self.dim(), "query point")?;
        self.schedule.check_t(t)?;
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite query point at t = {t}")));
        }
        Ok(())
    }

    fn require_partition(&self) -> Result<()> {
        if !self.has_partition() {
            return Err(Error::Argument("analytical flow has no partition".into()));
        }
        Ok(())
    }

    /// `ln p_t(x_t | x_0) + ln q(x_0)` for every data point.
    fn log_joint(&self, x_t: &[f64], t: f64) -> Vec<f64> {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let var = s * s;
        let norm = -0.5 * self.dim() as f64 * (2.0 * PI * var).ln();
        let mut mean = vec![0.0; self.dim()];
        self.dataset
            .rows()
            .zip(&self.log_q)
            .map(|(x0, lq)| {
                for (m, v) in mean.iter_mut().zip(x0) {
                    *m = a * v;
                }
                norm - sq_dist(x_t, &mean) / (2.0 * var) + lq
            })
            .collect()
    }

    fn moment(&self, log_joint: &[f64], members: &[usize]) -> Moment {
        let log_mass = lse_unchecked(members.iter().map(|&i| log_joint[i]));
        let mut mean = vec![0.0; self.dim()];
        if log_mass.is_finite() {
            for &i in members {
                let w = (log_joint[i] - log_mass).exp();
                if w == 0.0 {
                    continue;
                }
                for (m, v) in mean.iter_mut().zip(self.dataset.point(i)) {
                    *m += w * v;
                }
            }
        }
        Moment { log_mass, mean }
    }

    fn degenerate(&self, x_t: &[f64], t: f64, what: &str) -> Error {
        let nearest = self
            .dataset
            .rows()
            .map(|x0| sq_dist(x_t, x0).sqrt())
            .fold(f64::INFINITY, f64::min);
        Error::Degenerate(format!(
            "{what}: every posterior weight underflowed at t = {t} (σ = {}, nearest datum {nearest:.3e} away)",
            self.schedule.sigma(t)
        ))
    }

    /// Velocity implied by a posterior mean: `α̇ x̄_0 + σ̇ (x_t − α x̄_0)/σ`.
    fn velocity_from_mean(&self, x_t: &[f64], mean: &[f64], t: f64) -> Vec<f64> {
        let s = &self.schedule;
        let (a, sg, ad, sd) = (s.alpha(t), s.sigma(t), s.alpha_dot(t), s.sigma_dot(t));
        x_t.iter()
            .zip(mean)
            .map(|(x, m)| ad * m + sd * (x - a * m) / sg)
            .collect()
    }

    /// Score implied by a posterior mean: `−(x_t − α x̄_0)/σ²`.
    fn score_from_mean(&self, x_t: &[f64], mean: &[f64], t: f64) -> Vec<f64> {
        let (a, sg) = (self.schedule.alpha(t), self.schedule.sigma(t));
        x_t.iter()
            .zip(mean)
            .map(|(x, m)| -(x - a * m) / (sg * sg))
            .collect()
    }

    fn all_moment(&self, x_t: &[f64], t: f64, what: &str) -> Result<Moment> {
        self.check(x_t, t)?;
        let lj = self.log_joint(x_t, t);
        let all: Vec<usize> = (0..self.dataset.len()).collect();
        let m = self.moment(&lj, &all);
        if !m.log_mass.is_finite() {
            return Err(self.degenerate(x_t, t, what));
        }
        Ok(m)
    }

    /// `ln p_t(x_t)`.
    pub fn log_density(&self, x_t: &[f64], t: f64) -> Result<f64> {
        Ok(self.all_moment(x_t, t, "log_density")?.log_mass)
    }

    /// Posterior `p(x_0 | x_t)` over every data point.
    pub fn point_posterior(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x_t, t)?;
        let lj = self.log_joint(x_t, t);
        let total = lse_unchecked(lj.iter().copied());
        if !total.is_finite() {
            return Err(self.degenerate(x_t, t, "point_posterior"));
        }
        Ok(lj.into_iter().map(|v| (v - total).exp()).collect())
    }

    /// Posterior mean `E[x_0 | x_t]`.
    pub fn denoised_mean(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.all_moment(x_t, t, "denoised_mean")?.mean)
    }

    /// Marginal flow `u_t(x_t)`: the posterior average of conditional flows.
    pub fn marginal_flow(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let m = self.all_moment(x_t, t, "marginal_flow")?;
        Ok(self.velocity_from_mean(x_t, &m.mean, t))
    }

    /// Marginal score `∇ ln p_t(x_t)`.
    pub fn marginal_score(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let m = self.all_moment(x_t, t, "marginal_score")?;
        Ok(self.score_from_mean(x_t, &m.mean, t))
    }

    fn cluster_moment(&self, k: usize, x_t: &[f64], t: f64) -> Result<Moment> {
        self.require_partition()?;
        self.check(x_t, t)?;
        let members = self
            .clusters
            .get(k)
            .ok_or_else(|| Error::Argument(format!("cluster {k} out of range")))?;
        if members.is_empty() {
            return Err(Error::Argument(format!("cluster {k} is empty")));
        }
        let lj = self.log_joint(x_t, t);
        let m = self.moment(&lj, members);
        if !m.log_mass.is_finite() {
            return Err(self.degenerate(x_t, t, "expert_flow"));
        }
        Ok(m)
    }

    /// Flow of the data restricted to cluster `k`, normalized by `p_{t,S_k}`.
    pub fn expert_flow(&self, k: usize, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let m = self.cluster_moment(k, x_t, t)?;
        Ok(self.velocity_from_mean(x_t, &m.mean, t))
    }

    /// Score of the noised cluster-`k` distribution, `∇ ln p_t(x_t | v = k)`.
    pub fn expert_score(&self, k: usize, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let m = self.cluster_moment(k, x_t, t)?;
        Ok(self.score_from_mean(x_t, &m.mean, t))
    }

    /// Router posterior `p_{t,S_k}(x_t) / p_t(x_t)` for every cluster.
    pub fn router_posterior(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.require_partition()?;
        self.check(x_t, t)?;
        let lj = self.log_joint(x_t, t);
        let masses: Vec<f64> = self
            .clusters
            .iter()
            .map(|members| lse_unchecked(members.iter().map(|&i| lj[i])))
            .collect();
        let top = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(self.degenerate(x_t, t, "router_posterior"));
        }
        let shifted: Vec<f64> = masses.iter().map(|m| (m - top).exp()).collect();
        let total: f64 = shifted.iter().sum();
        Ok(shifted.into_iter().map(|w| w / total).collect())
    }

    /// `Σ_k posterior_k · expert_flow_k`, evaluated cluster by cluster.
    pub fn decomposed_flow(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.weighted_cluster_sum(x_t, t, |flow, k| flow.expert_flow(k, x_t, t))
    }

    /// `Σ_k p_t(v = k | x_t) · ∇ ln p_t(x_t | v = k)`.
    pub fn cluster_score_decomposition(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.weighted_cluster_sum(x_t, t, |flow, k| flow.expert_score(k, x_t, t))
    }

    fn weighted_cluster_sum(
        &self,
        x_t: &[f64],
        t: f64,
        per_cluster: impl Fn(&Self, usize) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let posterior = self.router_posterior(x_t, t)?;
        let mut out = vec![0.0; self.dim()];
        for (k, &p) in posterior.iter().enumerate() {
            if p == 0.0 || self.clusters[k].is_empty() {
                continue;
            }
            let v = per_cluster(self, k)?;
            for (o, vi) in out.iter_mut().zip(v) {
                *o += p * vi;
            }
        }
        Ok(out)
    }

    /// Norm of `u_t − [(α̇/α) x_t − (σ σ̇ − α̇ σ²/α) s_t]`, the Gaussian-path
    /// identity linking the marginal flow to the marginal score.
    pub fn flow_score_consistency(&self, x_t: &[f64], t: f64) -> Result<f64> {
        self.check(x_t, t)?;
        let s = &self.schedule;
        let (a, sg, ad, sd) = (s.alpha(t), s.sigma(t), s.alpha_dot(t), s.sigma_dot(t));
        if a == 0.0 {
            return Err(Error::Domain(format!("α_t vanishes at t = {t}")));
        }
        let u = self.marginal_flow(x_t, t)?;
        let score = self.marginal_score(x_t, t)?;
        let drift = ad / a;
        let coeff = sg * sd - drift * sg * sg;
        Ok(u.iter()
            .zip(x_t)
            .zip(&score)
            .map(|((u, x), sc)| {
                let r = u - (drift * x - coeff * sc);
                r * r
            })
            .sum::<f64>()
            .sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::conditional_flow;

    fn line(points: &[f64]) -> Dataset {
        Dataset::from_flat(points.to_vec(), 1).unwrap()
    }

    #[test]
    fn single_point_marginal_is_conditional() {
        let f = AnalyticalFlow::new(line(&[2.0]), Schedule::linear());
        assert_eq!(f.marginal_flow(&[1.0], 0.5).unwrap(), vec![-2.0]);
    }

    #[test]
    fn symmetric_pair_has_zero_flow_and_score_at_midpoint() {
        let f = AnalyticalFlow::new(line(&[-1.0, 1.0]), Schedule::linear());
        assert!(f.marginal_flow(&[0.0], 0.5).unwrap()[0].abs() < 1e-15);
        assert!(f.marginal_score(&[0.0], 0.5).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn single_gaussian_score() {
        let f = AnalyticalFlow::new(line(&[0.0]), Schedule::linear());
        assert!((f.marginal_score(&[1.0], 0.5).unwrap()[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let one = AnalyticalFlow::new(
            line(&[0.0, 3.0]).with_labels(vec![0, 0], 1).unwrap(),
            Schedule::linear(),
        );
        assert_eq!(one.router_posterior(&[1.0], 0.4).unwrap(), vec![1.0]);
        let two = AnalyticalFlow::new(
            line(&[-1.0, 1.0]).with_labels(vec![0, 1], 2).unwrap(),
            Schedule::cosine(),
        );
        for &t in &[0.01, 0.5, 1.0] {
            assert_eq!(two.router_posterior(&[0.0], t).unwrap(), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn singleton_expert_is_conditional_flow() {
        let ds = line(&[-1.0, 0.5, 4.0]).with_labels(vec![0, 1, 0], 2).unwrap();
        let f = AnalyticalFlow::new(ds, Schedule::linear());
        let got = f.expert_flow(1, &[0.3], 0.2).unwrap();
        let want = conditional_flow(&Schedule::linear(), &[0.3], &[0.5], 0.2).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let f = AnalyticalFlow::new(line(&[0.0, 1.0]), Schedule::linear());
        assert!(matches!(f.marginal_flow(&[0.0], 1e-4), Err(Error::Domain(_))));
        assert!(matches!(f.marginal_flow(&[0.0, 1.0], 0.5), Err(Error::Shape { .. })));
        assert!(matches!(f.router_posterior(&[0.0], 0.5), Err(Error::Argument(_))));
        assert!(matches!(
            f.marginal_flow(&[f64::INFINITY], 0.5),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            f.flow_score_consistency(&[0.0], 1.0),
            Err(Error::Domain(_))
        ));
        let empty = AnalyticalFlow::new(
            line(&[0.0, 1.0]).with_labels(vec![0, 0], 2).unwrap(),
            Schedule::linear(),
        );
        assert!(matches!(empty.expert_flow(1, &[0.0], 0.5), Err(Error::Argument(_))));
        assert_eq!(empty.router_posterior(&[0.0], 0.5).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn far_query_at_small_t_does_not_underflow() {
        let f = AnalyticalFlow::new(line(&[0.0, 1.0]), Schedule::linear());
        let u = f.marginal_flow(&[1000.0], 1e-3).unwrap();
        assert!(u[0].is_finite());
    }
}
