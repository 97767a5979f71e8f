use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use serde::Serialize;

use crate::ensemble::VelocityField;
use crate::error::{Error, Result};
use crate::flow::Dataset;
use crate::numerics::{AdamState, EmaState, MlpModel, Rng};
use crate::training::checkpoint::{config_hash, Checkpoint, Role, CHECKPOINT_VERSION};
use crate::training::losses::{cfm_loss, distill_loss, router_loss};
use crate::training::{denoiser_rng, router_rng, student_rng, ModelConfig, TrainConfig};

/// Smoothing factor of the reported training loss.
const LOSS_SMOOTHING: f64 = 0.98;

/// External control of a running worker, used for cancellation and for
/// fault-injection tests.
#[derive(Debug, Clone, Default)]
pub struct WorkerControl {
    /// Fail with a worker error just before this step.
    pub abort_at_step: Option<u64>,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl WorkerControl {
    pub fn abort_at(step: u64) -> Self {
        Self {
            abort_at_step: Some(step),
            cancel: None,
        }
    }

    fn check(&self, worker: &str, step: u64) -> Result<()> {
        if self.abort_at_step == Some(step) {
            return Err(Error::Worker {
                worker: worker.to_string(),
                reason: format!("aborted at step {step}"),
            });
        }
        if let Some(flag) = &self.cancel {
            if flag.load(Ordering::Relaxed) {
                return Err(Error::Worker {
                    worker: worker.to_string(),
                    reason: format!("cancelled at step {step}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: u64,
    /// Exponentially smoothed training loss.
    pub loss: f64,
    /// Training FLOPs accumulated so far.
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
    pub training_flops: u64,
}

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("step,loss,flops\n");
        for row in &self.metrics {
            out.push_str(&format!("{},{:?},{}\n", row.step, row.loss, row.flops));
        }
        out
    }
}

#[derive(Serialize)]
struct HashInput<'a> {
    config: &'a TrainConfig,
    model: &'a ModelConfig,
    batch: usize,
    k: usize,
}

/// Fixed pieces of one training run.
struct RunSpec<'a> {
    worker: String,
    role: Role,
    expert: Option<usize>,
    k: usize,
    batch: usize,
    config: &'a TrainConfig,
    model_config: &'a ModelConfig,
    control: &'a WorkerControl,
    /// FLOPs charged per training sample.
    flops_per_sample: u64,
}

/// Shared loop: draw a minibatch of indices from the data weights, take a
/// loss gradient, an Adam step, and an EMA update.
fn run(
    spec: RunSpec<'_>,
    mut model: MlpModel,
    dataset: &Dataset,
    mut rng: Rng,
    mut loss_fn: impl FnMut(&MlpModel, &[usize], &mut Rng) -> Result<(f64, Vec<f64>)>,
) -> Result<TrainOutcome> {
    let config = spec.config;
    config.validate()?;
    let sampler = WeightedIndex::new(dataset.weights())
        .map_err(|e| Error::Argument(format!("cannot sample training data: {e}")))?;
    let mut adam = AdamState::new(model.num_params(), config.lr);
    let mut ema = EmaState::new(config.ema_decay, model.params());
    let mut metrics = Vec::new();
    let mut smoothed: Option<f64> = None;
    let mut flops = 0u64;
    let mut indices = vec![0usize; spec.batch];
    for step in 0..config.steps {
        spec.control.check(&spec.worker, step)?;
        for idx in indices.iter_mut() {
            *idx = rng.sample(&sampler);
        }
        let (loss, grad) = loss_fn(&model, &indices, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Worker {
                worker: spec.worker.clone(),
                reason: format!("non-finite loss at step {step}"),
            });
        }
        adam.step(model.params_mut(), &grad)?;
        ema.update(model.params())?;
        flops += spec.flops_per_sample * spec.batch as u64;
        let s = match smoothed {
            None => loss,
            Some(prev) => LOSS_SMOOTHING * prev + (1.0 - LOSS_SMOOTHING) * loss,
        };
        smoothed = Some(s);
        let done = step + 1;
        if (config.loss_report_every > 0 && done % config.loss_report_every == 0) || done == config.steps {
            metrics.push(MetricRow {
                step: done,
                loss: s,
                flops,
            });
        }
    }
    let hash = config_hash(&HashInput {
        config,
        model: spec.model_config,
        batch: spec.batch,
        k: spec.k,
    });
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        role: spec.role,
        expert: spec.expert,
        k: spec.k,
        schedule: config.schedule.kind,
        t_min: config.schedule.t_min,
        dims: model.layer_dims().to_vec(),
        activation: model.activation(),
        time_features: model.time_features(),
        params_raw: model.params().to_vec(),
        params_ema: ema.shadow().to_vec(),
        step: config.steps,
        seed: config.seed,
        config_hash: hash,
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        training_flops: flops,
    })
}

/// Forward plus backward, counted as three forwards.
fn train_flops(model: &MlpModel) -> u64 {
    3 * model.flops_per_forward()
}

fn denoiser_run(
    shard: &Dataset,
    index: usize,
    role: Role,
    k: usize,
    batch: usize,
    config: &TrainConfig,
    model_config: &ModelConfig,
    control: &WorkerControl,
) -> Result<TrainOutcome> {
    let rng = denoiser_rng(config.seed, index);
    let model = model_config.build(shard.dim(), shard.dim(), false, &mut rng.split("init"))?;
    let schedule = config.schedule;
    let dim = shard.dim();
    let points = shard.points();
    let spec = RunSpec {
        worker: match role {
            Role::Expert => format!("expert-{index}"),
            _ => role.name().to_string(),
        },
        role,
        expert: (role == Role::Expert).then_some(index),
        k,
        batch,
        config,
        model_config,
        control,
        flops_per_sample: train_flops(&model),
    };
    run(spec, model, shard, rng.split("data"), |m, idx, rng| {
        let batch: Vec<&[f64]> = idx.iter().map(|&i| &points[i * dim..(i + 1) * dim]).collect();
        cfm_loss(m, &batch, rng, &schedule)
    })
}

/// Train expert `index` of `k` on its own shard only, with the per-expert
/// batch `global / k`.
pub fn train_expert(
    shard: &Dataset,
    index: usize,
    k: usize,
    config: &TrainConfig,
    model_config: &ModelConfig,
    control: &WorkerControl,
) -> Result<TrainOutcome> {
    if index >= k {
        return Err(Error::Argument(format!("expert index {index} out of range for K = {k}")));
    }
    let batch = config.expert_batch(k)?;
    denoiser_run(shard, index, Role::Expert, k, batch, config, model_config, control)
}

/// A single denoiser on all the data with the full global batch.
pub fn train_monolith(
    dataset: &Dataset,
    config: &TrainConfig,
    model_config: &ModelConfig,
    control: &WorkerControl,
) -> Result<TrainOutcome> {
    denoiser_run(
        dataset,
        0,
        Role::Monolith,
        1,
        config.batch_size,
        config,
        model_config,
        control,
    )
}

/// Cluster classifier on labelled data. Reads no denoiser state; its final
/// layer starts at zero so the untrained router is exactly uniform.
pub fn train_router(
    dataset: &Dataset,
    config: &TrainConfig,
    model_config: &ModelConfig,
    control: &WorkerControl,
) -> Result<TrainOutcome> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Argument("router training needs cluster labels".into()))?;
    let k = dataset.num_clusters();
    let rng = router_rng(config.seed);
    let model = model_config.build(dataset.dim(), k, true, &mut rng.split("init"))?;
    let schedule = config.schedule;
    let dim = dataset.dim();
    let points = dataset.points();
    let spec = RunSpec {
        worker: "router".into(),
        role: Role::Router,
        expert: None,
        k,
        batch: config.batch_size,
        config,
        model_config,
        control,
        flops_per_sample: train_flops(&model),
    };
    run(spec, model, dataset, rng.split("data"), |m, idx, rng| {
        let batch: Vec<&[f64]> = idx.iter().map(|&i| &points[i * dim..(i + 1) * dim]).collect();
        let ks: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        router_loss(m, &batch, &ks, rng, &schedule)
    })
}

/// Dense student regressed onto label-selected teachers. `init` overrides
/// the random initialization.
pub fn train_distilled<T: VelocityField>(
    dataset: &Dataset,
    teachers: &[T],
    config: &TrainConfig,
    model_config: &ModelConfig,
    init: Option<MlpModel>,
    control: &WorkerControl,
) -> Result<TrainOutcome> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Argument("distillation needs cluster labels".into()))?;
    let k = dataset.num_clusters();
    if teachers.len() != k {
        return Err(Error::Argument(format!(
            "distillation needs {k} expert teachers, got {}",
            teachers.len()
        )));
    }
    let rng = student_rng(config.seed);
    let model = match init {
        Some(m) => m,
        None => model_config.build(dataset.dim(), dataset.dim(), false, &mut rng.split("init"))?,
    };
    let teacher_flops = teachers.iter().map(|t| t.forward_cost()).max().unwrap_or(0);
    let schedule = config.schedule;
    let dim = dataset.dim();
    let points = dataset.points();
    let spec = RunSpec {
        worker: "student".into(),
        role: Role::Student,
        expert: None,
        k,
        batch: config.batch_size,
        config,
        model_config,
        control,
        flops_per_sample: train_flops(&model) + teacher_flops,
    };
    run(spec, model, dataset, rng.split("data"), |m, idx, rng| {
        let batch: Vec<&[f64]> = idx.iter().map(|&i| &points[i * dim..(i + 1) * dim]).collect();
        let ks: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        distill_loss(m, teachers, &batch, &ks, rng, &schedule)
    })
}
