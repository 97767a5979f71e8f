//! Expert, router, and student training, plus the isolated-worker
//! orchestration that trains a whole ensemble without any shared state.

pub mod checkpoint;
pub mod ledger;
pub mod losses;
pub mod orchestrate;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Schedule;
use crate::numerics::{Activation, MlpModel, Rng, DEFAULT_TIME_FEATURES};

pub use checkpoint::{config_hash, Checkpoint, Role, CHECKPOINT_VERSION};
pub use ledger::{FlopLedger, LedgerTotals, TrainingRole};
pub use losses::{cfm_loss, distill_loss, router_loss};
pub use orchestrate::{
    orchestrate_decentralized, Execution, OrchestrationConfig, OrchestrationOutcome, WorkerId,
};
pub use trainer::{
    train_distilled, train_expert, train_monolith, train_router, MetricRow, TrainOutcome,
    WorkerControl,
};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_EMA_DECAY: f64 = 0.9999;
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Global batch; expert runs divide it evenly among the `K` experts.
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Carries `t_min`: training times are drawn from `U[t_min, 1]`.
    pub schedule: Schedule,
    pub loss_report_every: u64,
}

impl TrainConfig {
    pub fn new(steps: u64, seed: u64, schedule: Schedule) -> Self {
        Self {
            steps,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            ema_decay: DEFAULT_EMA_DECAY,
            seed,
            schedule,
            loss_report_every: 100,
        }
    }

    pub fn t_min(&self) -> f64 {
        self.schedule.t_min
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("EMA decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }

    /// Per-expert batch when the global batch is split across `k` experts.
    pub fn expert_batch(&self, k: usize) -> Result<usize> {
        if k == 0 || self.batch_size % k != 0 {
            return Err(Error::Config(format!(
                "batch size {} is not divisible by K = {k}",
                self.batch_size
            )));
        }
        Ok(self.batch_size / k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            time_features: DEFAULT_TIME_FEATURES,
        }
    }
}

impl ModelConfig {
    /// Same family at half the width, the default router size.
    pub fn router_for(expert: &ModelConfig) -> Self {
        Self {
            hidden: expert.hidden.iter().map(|&h| (h / 2).max(1)).collect(),
            ..expert.clone()
        }
    }

    pub fn build(&self, data_dim: usize, out_dim: usize, zero_output: bool, rng: &mut Rng) -> Result<MlpModel> {
        MlpModel::init(
            data_dim,
            &self.hidden,
            out_dim,
            self.activation,
            self.time_features,
            zero_output,
            rng,
        )
    }
}

/// Seed stream of denoiser `index`; the monolith uses index 0, so a `K = 1`
/// expert and the monolith start from the same stream.
pub fn denoiser_rng(seed: u64, index: usize) -> Rng {
    Rng::new(seed).split("denoiser").split_index(index as u64)
}

pub fn router_rng(seed: u64) -> Rng {
    Rng::new(seed).split("router")
}

pub fn student_rng(seed: u64) -> Rng {
    Rng::new(seed).split("student")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_batch_divides_evenly() {
        let cfg = TrainConfig::new(10, 0, Schedule::linear());
        assert_eq!(cfg.expert_batch(8).unwrap(), 32);
        assert!(matches!(cfg.expert_batch(3), Err(Error::Config(_))));
    }

    #[test]
    fn router_is_half_width() {
        let r = ModelConfig::router_for(&ModelConfig::default());
        assert_eq!(r.hidden, vec![32, 32]);
    }
}
