//! Compute accounting for sampling and training.
//!
//! Costs are integers in whatever unit the caller configures (GFLOPs for the
//! paper-scale table, FLOPs for the desk-scale MLPs). Counters are atomic so a
//! single ledger can be shared by concurrently running trajectories.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::ensemble::Strategy;

#[derive(Debug, Default)]
pub struct FlopLedger {
    pub expert_fwd_cost: u64,
    pub router_fwd_cost: u64,
    expert_forwards: AtomicU64,
    router_forwards: AtomicU64,
    steps: AtomicU64,
    expert_training: AtomicU64,
    router_training: AtomicU64,
    distill_training: AtomicU64,
}

/// Which training role a cost is booked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingRole {
    Expert,
    Router,
    Distill,
}

impl FlopLedger {
    pub fn new(expert_fwd_cost: u64, router_fwd_cost: u64) -> Self {
        Self {
            expert_fwd_cost,
            router_fwd_cost,
            ..Default::default()
        }
    }

    /// Cost of one sampling step under `strategy` with `k` experts:
    /// active experts times the expert cost, plus one router evaluation for
    /// every routed strategy. `None` for threshold selection, whose active
    /// count is only known per run.
    pub fn cost(&self, strategy: &Strategy, k: usize) -> Option<u64> {
        let active = strategy.active_experts(k)? as u64;
        let router = if strategy.uses_router() {
            self.router_fwd_cost
        } else {
            0
        };
        Some(active * self.expert_fwd_cost + router)
    }

    /// Record one ensemble evaluation.
    pub fn record_step(&self, active_experts: usize, router_evaluated: bool) {
        self.steps.fetch_add(1, Ordering::Relaxed);
        self.expert_forwards
            .fetch_add(active_experts as u64, Ordering::Relaxed);
        if router_evaluated {
            self.router_forwards.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn record_training(&self, role: TrainingRole, flops: u64) {
        let counter = match role {
            TrainingRole::Expert => &self.expert_training,
            TrainingRole::Router => &self.router_training,
            TrainingRole::Distill => &self.distill_training,
        };
        counter.fetch_add(flops, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerTotals {
        LedgerTotals {
            steps: self.steps.load(Ordering::Relaxed),
            expert_forwards: self.expert_forwards.load(Ordering::Relaxed),
            router_forwards: self.router_forwards.load(Ordering::Relaxed),
            expert_training_flops: self.expert_training.load(Ordering::Relaxed),
            router_training_flops: self.router_training.load(Ordering::Relaxed),
            distill_training_flops: self.distill_training.load(Ordering::Relaxed),
            inference_cost: self.expert_forwards.load(Ordering::Relaxed) * self.expert_fwd_cost
                + self.router_forwards.load(Ordering::Relaxed) * self.router_fwd_cost,
        }
    }

    /// Average realized cost per sampling step so far.
    pub fn realized_cost_per_step(&self) -> f64 {
        let t = self.snapshot();
        if t.steps == 0 {
            return 0.0;
        }
        t.inference_cost as f64 / t.steps as f64
    }

    /// Router training FLOPs as a fraction of expert training FLOPs.
    pub fn router_overhead(&self) -> f64 {
        let t = self.snapshot();
        if t.expert_training_flops == 0 {
            return 0.0;
        }
        t.router_training_flops as f64 / t.expert_training_flops as f64
    }

    /// Rows of the strategy-cost table, in the published row order.
    pub fn table(&self, k: usize) -> Vec<(String, Option<u64>)> {
        Strategy::table_rows(k)
            .into_iter()
            .map(|(name, s)| {
                let cost = self.cost(&s, k);
                (name, cost)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub steps: u64,
    pub expert_forwards: u64,
    pub router_forwards: u64,
    pub expert_training_flops: u64,
    pub router_training_flops: u64,
    pub distill_training_flops: u64,
    pub inference_cost: u64,
}

impl fmt::Display for LedgerTotals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "steps={} expert_fwd={} router_fwd={} inference_cost={} train(expert={}, router={}, distill={})",
            self.steps,
            self.expert_forwards,
            self.router_forwards,
            self.inference_cost,
            self.expert_training_flops,
            self.router_training_flops,
            self.distill_training_flops
        )
    }
}
