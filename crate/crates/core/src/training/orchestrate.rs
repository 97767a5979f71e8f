//! Decentralized training: `K` expert workers and one router worker, each
//! handed its own copy of its data and its own seed stream and nothing else.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::Dataset;
use crate::partition::Partition;
use crate::io::write_atomic;
use crate::training::ledger::{FlopLedger, TrainingRole};
use crate::training::trainer::{train_expert, train_router, TrainOutcome, WorkerControl};
use crate::training::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkerId {
    Expert(usize),
    Router,
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerId::Expert(k) => write!(f, "expert-{k}"),
            WorkerId::Router => f.write_str("router"),
        }
    }
}

impl WorkerId {
    /// File stem used for this worker's checkpoint and metrics.
    pub fn file_stem(&self) -> String {
        match self {
            WorkerId::Expert(k) => format!("expert_{k}"),
            WorkerId::Router => "router".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Serial,
    /// One OS thread per worker.
    Threaded,
}

#[derive(Debug, Clone)]
pub struct OrchestrationConfig {
    /// Expert config; its batch size is the global batch split over `K`.
    pub expert: TrainConfig,
    pub router: TrainConfig,
    pub expert_model: ModelConfig,
    pub router_model: ModelConfig,
    pub execution: Execution,
    /// When set, each worker writes `checkpoints/<worker>.json` and
    /// `metrics/<worker>.csv` here as soon as it finishes.
    pub out_dir: Option<PathBuf>,
    pub faults: Vec<(WorkerId, WorkerControl)>,
}

impl OrchestrationConfig {
    pub fn new(expert: TrainConfig, expert_model: ModelConfig) -> Self {
        Self {
            router: expert.clone(),
            router_model: ModelConfig::router_for(&expert_model),
            expert,
            expert_model,
            execution: Execution::Serial,
            out_dir: None,
            faults: Vec::new(),
        }
    }

    fn control(&self, id: WorkerId) -> WorkerControl {
        self.faults
            .iter()
            .find(|(w, _)| *w == id)
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    }
}

#[derive(Debug)]
pub struct OrchestrationOutcome {
    pub experts: Vec<Result<TrainOutcome>>,
    pub router: Result<TrainOutcome>,
}

impl OrchestrationOutcome {
    pub fn failures(&self) -> Vec<(WorkerId, &Error)> {
        let mut out: Vec<(WorkerId, &Error)> = self
            .experts
            .iter()
            .enumerate()
            .filter_map(|(k, r)| r.as_ref().err().map(|e| (WorkerId::Expert(k), e)))
            .collect();
        if let Err(e) = &self.router {
            out.push((WorkerId::Router, e));
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Everything a single worker owns.
struct Job {
    id: WorkerId,
    data: Dataset,
    control: WorkerControl,
}

/// Train all `K` experts and the router. Each expert sees only its shard;
/// the router sees the labelled data and no expert state. A failing worker
/// is reported in its own slot and does not disturb the others.
pub fn orchestrate_decentralized(
    dataset: &Dataset,
    partition: &Partition,
    config: &OrchestrationConfig,
    ledger: Option<&FlopLedger>,
) -> Result<OrchestrationOutcome> {
    let labelled = partition.label(dataset.clone().without_labels())?;
    let k = partition.k;
    config.expert.expert_batch(k)?;
    let mut jobs = Vec::with_capacity(k + 1);
    for c in 0..k {
        let id = WorkerId::Expert(c);
        jobs.push(Job {
            id,
            data: labelled.cluster_shard(c)?,
            control: config.control(id),
        });
    }
    jobs.push(Job {
        id: WorkerId::Router,
        data: labelled,
        control: config.control(WorkerId::Router),
    });

    let results: Vec<(WorkerId, Result<TrainOutcome>)> = match config.execution {
        Execution::Serial => jobs
            .into_iter()
            .map(|job| (job.id, run_job(job, k, config)))
            .collect(),
        Execution::Threaded => std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|job| {
                    let id = job.id;
                    (id, s.spawn(move || run_job(job, k, config)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| {
                    let r = h.join().unwrap_or_else(|_| {
                        Err(Error::Worker {
                            worker: id.to_string(),
                            reason: "worker thread panicked".into(),
                        })
                    });
                    (id, r)
                })
                .collect()
        }),
    };

    let mut experts = Vec::with_capacity(k);
    let mut router = None;
    for (id, result) in results {
        if let (Some(ledger), Ok(out)) = (ledger, &result) {
            let role = match id {
                WorkerId::Expert(_) => TrainingRole::Expert,
                WorkerId::Router => TrainingRole::Router,
            };
            ledger.record_training(role, out.training_flops);
        }
        match id {
            WorkerId::Expert(_) => experts.push(result),
            WorkerId::Router => router = Some(result),
        }
    }
    Ok(OrchestrationOutcome {
        experts,
        router: router.expect("router job always runs"),
    })
}

fn run_job(job: Job, k: usize, config: &OrchestrationConfig) -> Result<TrainOutcome> {
    let out = match job.id {
        WorkerId::Expert(c) => train_expert(&job.data, c, k, &config.expert, &config.expert_model, &job.control)?,
        WorkerId::Router => train_router(&job.data, &config.router, &config.router_model, &job.control)?,
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, job.id, &out)?;
    }
    Ok(out)
}

/// Write a worker's checkpoint and metrics under `dir`.
pub fn write_outputs(dir: &Path, id: WorkerId, out: &TrainOutcome) -> Result<()> {
    let stem = id.file_stem();
    out.checkpoint
        .save(&dir.join("checkpoints").join(format!("{stem}.json")))?;
    write_atomic(
        &dir.join("metrics").join(format!("{stem}.csv")),
        out.metrics_csv().as_bytes(),
    )
}
