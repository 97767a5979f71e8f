//! Combining expert velocities under a router, and the ODE sampler.

pub mod policy;
pub mod sampler;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::AnalyticalFlow;
use crate::numerics::{softmax, MlpModel, Rng};
use crate::training::FlopLedger;

pub use policy::{check_simplex, select_experts, temper, Strategy, DEFAULT_NUCLEUS_P};
pub use sampler::{
    initial_noise, integrate, sample, sample_ensemble, sample_field, Integrator, SampleSet, SamplerConfig,
};

/// A time-dependent velocity field `v(x, t)`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
    /// Cost of one evaluation in ledger units; zero for oracles.
    fn forward_cost(&self) -> u64 {
        0
    }
}

/// A map from `(x, t)` to a probability vector over experts.
pub trait Router: Send + Sync {
    fn num_experts(&self) -> usize;
    fn posterior(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
    fn forward_cost(&self) -> u64 {
        0
    }
}

impl VelocityField for MlpModel {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.forward(x, t)
    }

    fn forward_cost(&self) -> u64 {
        self.flops_per_forward()
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }

    fn forward_cost(&self) -> u64 {
        (**self).forward_cost()
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }

    fn forward_cost(&self) -> u64 {
        (**self).forward_cost()
    }
}

/// Router network: softmax of the MLP logits.
#[derive(Debug, Clone)]
pub struct MlpRouter(pub MlpModel);

impl Router for MlpRouter {
    fn num_experts(&self) -> usize {
        self.0.out_dim()
    }

    fn posterior(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.0.forward(x, t)?))
    }

    fn forward_cost(&self) -> u64 {
        self.0.flops_per_forward()
    }
}

/// Exact marginal flow of the whole dataset: the analytical monolith.
#[derive(Debug, Clone)]
pub struct AnalyticalMarginal(pub Arc<AnalyticalFlow>);

impl VelocityField for AnalyticalMarginal {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.0.marginal_flow(x, t)
    }
}

/// Exact flow of cluster `k`.
#[derive(Debug, Clone)]
pub struct AnalyticalExpert {
    pub flow: Arc<AnalyticalFlow>,
    pub k: usize,
}

impl VelocityField for AnalyticalExpert {
    fn dim(&self) -> usize {
        self.flow.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.flow.expert_flow(self.k, x, t)
    }
}

/// Exact cluster posterior.
#[derive(Debug, Clone)]
pub struct AnalyticalRouter(pub Arc<AnalyticalFlow>);

impl Router for AnalyticalRouter {
    fn num_experts(&self) -> usize {
        self.0.num_clusters()
    }

    fn posterior(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.0.router_posterior(x, t)
    }
}

/// `K` experts and a router, optionally with a monolith for the bypass
/// strategy.
pub struct Ensemble {
    experts: Vec<Box<dyn VelocityField>>,
    router: Option<Box<dyn Router>>,
    monolith: Option<Box<dyn VelocityField>>,
    ledger: Option<Arc<FlopLedger>>,
}

impl Ensemble {
    pub fn new(experts: Vec<Box<dyn VelocityField>>, router: Option<Box<dyn Router>>) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one expert".into()))?;
        let dim = first.dim();
        if let Some(bad) = experts.iter().position(|e| e.dim() != dim) {
            return Err(Error::Config(format!(
                "expert {bad} has dimension {}, expert 0 has {dim}",
                experts[bad].dim()
            )));
        }
        if let Some(r) = &router {
            if r.num_experts() != experts.len() {
                return Err(Error::Config(format!(
                    "router predicts {} clusters but {} experts are loaded",
                    r.num_experts(),
                    experts.len()
                )));
            }
        }
        Ok(Self {
            experts,
            router,
            monolith: None,
            ledger: None,
        })
    }

    /// Exact experts and router of a partitioned dataset, with the exact
    /// marginal flow as the monolith.
    pub fn analytical(flow: Arc<AnalyticalFlow>) -> Result<Self> {
        if !flow.has_partition() {
            return Err(Error::Argument("analytical ensemble needs a partitioned dataset".into()));
        }
        let experts: Vec<Box<dyn VelocityField>> = (0..flow.num_clusters())
            .map(|k| {
                Box::new(AnalyticalExpert {
                    flow: flow.clone(),
                    k,
                }) as Box<dyn VelocityField>
            })
            .collect();
        let router = Box::new(AnalyticalRouter(flow.clone()));
        Ok(Self::new(experts, Some(router))?.with_monolith(Box::new(AnalyticalMarginal(flow))))
    }

    pub fn with_monolith(mut self, monolith: Box<dyn VelocityField>) -> Self {
        self.monolith = Some(monolith);
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<FlopLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn ledger(&self) -> Option<&Arc<FlopLedger>> {
        self.ledger.as_ref()
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.experts[0].dim()
    }

    pub fn expert(&self, k: usize) -> &dyn VelocityField {
        self.experts[k].as_ref()
    }

    pub fn experts(&self) -> &[Box<dyn VelocityField>] {
        &self.experts
    }

    pub fn router(&self) -> Option<&dyn Router> {
        self.router.as_deref()
    }

    fn record(&self, active: usize, routed: bool) {
        if let Some(l) = &self.ledger {
            l.record_step(active, routed);
        }
    }

    /// `Σ_k w_k v_k(x, t)` with weights chosen by `strategy`. Only experts
    /// with nonzero weight are evaluated. `label` is the trajectory's cluster
    /// for the oracle strategy; `rng` drives stochastic selection.
    pub fn velocity(&self, strategy: &Strategy, x: &[f64], t: f64, rng: &mut Rng, label: Option<usize>) -> Result<Vec<f64>> {
        match strategy {
            Strategy::Monolith => {
                let m = self
                    .monolith
                    .as_ref()
                    .ok_or_else(|| Error::Config("monolith strategy needs a monolith model".into()))?;
                self.record(1, false);
                m.velocity(x, t)
            }
            Strategy::Oracle => {
                let w = select_experts(&vec![0.0; self.num_experts()], strategy, rng, label)?;
                let k = w.iter().position(|&v| v == 1.0).expect("one-hot");
                self.record(1, false);
                self.experts[k].velocity(x, t)
            }
            _ => {
                let router = self
                    .router
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("strategy {strategy} needs a router")))?;
                let probs = router.posterior(x, t)?;
                if probs.len() != self.num_experts() {
                    return Err(Error::Config(format!(
                        "router returned {} probabilities for {} experts",
                        probs.len(),
                        self.num_experts()
                    )));
                }
                let weights = select_experts(&probs, strategy, rng, label)?;
                let mut out = vec![0.0; self.dim()];
                let mut active = 0;
                for (expert, &w) in self.experts.iter().zip(&weights) {
                    if w > 0.0 {
                        active += 1;
                        for (o, v) in out.iter_mut().zip(expert.velocity(x, t)?) {
                            *o += w * v;
                        }
                    }
                }
                self.record(active, true);
                Ok(out)
            }
        }
    }

    /// Per-evaluation cost of the components, for building a ledger.
    pub fn component_costs(&self) -> (u64, u64) {
        let expert = self.experts.iter().map(|e| e.forward_cost()).max().unwrap_or(0);
        let router = self.router.as_ref().map(|r| r.forward_cost()).unwrap_or(0);
        (expert, router)
    }
}

/// An ensemble bound to one strategy, usable wherever a single field is
/// expected (distillation teachers, seed matching). Stochastic strategies
/// are rejected because a field must be a deterministic function.
pub struct PolicyField<'a> {
    pub ensemble: &'a Ensemble,
    pub strategy: Strategy,
}

impl<'a> PolicyField<'a> {
    pub fn new(ensemble: &'a Ensemble, strategy: Strategy) -> Result<Self> {
        if strategy.is_stochastic() || strategy == Strategy::Oracle {
            return Err(Error::Argument(format!("{strategy} is not a deterministic field")));
        }
        Ok(Self { ensemble, strategy })
    }
}

impl VelocityField for PolicyField<'_> {
    fn dim(&self) -> usize {
        self.ensemble.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.ensemble.velocity(&self.strategy, x, t, &mut Rng::new(0), None)
    }
}
