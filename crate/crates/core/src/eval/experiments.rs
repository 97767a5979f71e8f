//! Experiment drivers. Each experiment generates synthetic data per seed,
//! holds out a fixed fraction before any clustering, trains or loads the
//! arms it needs, samples them from shared noise and scores them against the
//! held-out points.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{generate, heldout_split, Shape};
use crate::ensemble::{
    sample, sample_ensemble, AnalyticalMarginal, Ensemble, MlpRouter, PolicyField, SampleSet, SamplerConfig, Strategy,
    VelocityField,
};
use crate::error::{Error, Result};
use crate::eval::metrics::{energy_distance, sliced_wasserstein, PointCloud};
use crate::eval::report::{scatter_svg, write_reports, EvalReport, PRIMARY_METRIC};
use crate::flow::{AnalyticalFlow, Dataset, Schedule};
use crate::io::write_atomic;
use crate::numerics::Rng;
use crate::partition::{random_partition, two_stage_partition, Partition, PartitionMode, PartitionSpec};
use crate::training::{
    config_hash, orchestrate_decentralized, train_distilled, train_monolith, Checkpoint, Execution, FlopLedger,
    ModelConfig, OrchestrationConfig, Role, TrainConfig, TrainOutcome, WorkerControl,
};

pub const DEFAULT_N_PROJECTIONS: usize = 128;
pub const DEFAULT_N_SAMPLES: usize = 4096;
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DdmVsMonolith,
    ExpertCountSweep,
    ClusterAblation,
    DistillCompare,
    StrategyTable,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::DdmVsMonolith,
        ExperimentKind::ExpertCountSweep,
        ExperimentKind::ClusterAblation,
        ExperimentKind::DistillCompare,
        ExperimentKind::StrategyTable,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Usage(format!("unknown experiment '{name}' (expected one of {})", names.join(", ")))
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DdmVsMonolith => "ddm_vs_monolith",
            ExperimentKind::ExpertCountSweep => "expert_count_sweep",
            ExperimentKind::ClusterAblation => "cluster_ablation",
            ExperimentKind::DistillCompare => "distill_compare",
            ExperimentKind::StrategyTable => "strategy_table",
        }
    }
}

/// Where trained arms come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointSource {
    /// Always train; save under the checkpoint directory when one is set.
    #[default]
    Train,
    /// Only load; a missing file is a configuration error naming the arm.
    Load,
    /// Load what exists, train and save the rest.
    Reuse,
}

impl CheckpointSource {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(CheckpointSource::Train),
            "load" => Ok(CheckpointSource::Load),
            "reuse" => Ok(CheckpointSource::Reuse),
            other => Err(Error::Usage(format!("unknown checkpoint source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub shape: Shape,
    /// Generated rows per seed, before the held-out split.
    pub n_data: usize,
    pub dim: usize,
    /// Experts of the main DDM arm.
    pub k: usize,
    /// Expert counts of the sweep experiment.
    pub sweep_k: Vec<usize>,
    pub fine_centroids: usize,
    /// Expert and monolith training; the seed is replaced per run.
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub distill_steps: u64,
    pub distill_batch: usize,
    /// Sampler; the seed is replaced per run.
    pub sampler: SamplerConfig,
    pub n_samples: usize,
    pub n_projections: usize,
    pub heldout_fraction: f64,
    /// Use exact flows in place of every trained model.
    pub analytical: bool,
    pub source: CheckpointSource,
    /// Run directory holding `checkpoints/` and `metrics/`.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Directory for the report files.
    #[serde(skip)]
    pub report_dir: Option<PathBuf>,
    #[serde(skip)]
    pub svg: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentConfig {
    /// Desk-scale defaults on eight separated 2D blobs.
    pub fn new(kind: ExperimentKind, seeds: Vec<u64>, schedule: Schedule) -> Self {
        let train = TrainConfig {
            lr: 2e-3,
            ema_decay: 0.995,
            ..TrainConfig::new(2000, 0, schedule)
        };
        Self {
            kind,
            seeds,
            shape: Shape::Blobs {
                k: 8,
                separation: 10.0,
                std: 1.0,
            },
            n_data: 4000,
            dim: 2,
            k: 8,
            sweep_k: vec![4, 8, 16],
            fine_centroids: 64,
            distill_steps: train.steps,
            distill_batch: train.batch_size / 4,
            train,
            model: ModelConfig::default(),
            sampler: SamplerConfig {
                t_min: schedule.t_min,
                ..SamplerConfig::new(0)
            },
            n_samples: DEFAULT_N_SAMPLES,
            n_projections: DEFAULT_N_PROJECTIONS,
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
            analytical: false,
            source: CheckpointSource::Train,
            checkpoint_dir: None,
            report_dir: None,
            svg: false,
            execution: Execution::Serial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one seed".into()));
        }
        if self.n_samples == 0 || self.n_projections == 0 {
            return Err(Error::Config("n_samples and n_projections must be positive".into()));
        }
        if self.source != CheckpointSource::Train && self.checkpoint_dir.is_none() && !self.analytical {
            return Err(Error::Config("loading checkpoints needs a run directory".into()));
        }
        self.train.validate()
    }

    fn schedule(&self) -> Schedule {
        self.train.schedule
    }
}

/// Reports of every arm and seed, in run order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
}

impl ExperimentOutput {
    pub fn arm(&self, arm: &str) -> Vec<&EvalReport> {
        self.reports.iter().filter(|r| r.arm == arm).collect()
    }

    /// Seed-averaged primary metric of `arm`.
    pub fn mean(&self, arm: &str) -> Option<f64> {
        let rows = self.arm(arm);
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.value).sum::<f64>() / rows.len() as f64)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let run = SeedRun::new(config, seed)?;
        match config.kind {
            ExperimentKind::DdmVsMonolith => {
                let (mono, flops) = run.monolith()?;
                reports.push(run.score_field("monolith", &mono, flops, BTreeMap::new())?);
                let ddm = run.ddm(config.k, PartitionMode::FeatureKmeans)?;
                reports.push(run.score_ensemble("ddm-top-1", &ddm, &Strategy::TopK(1), BTreeMap::new())?);
                reports.push(run.score_ensemble("ddm-full", &ddm, &Strategy::Full, BTreeMap::new())?);
            }
            ExperimentKind::ExpertCountSweep => {
                for &k in &config.sweep_k {
                    let ddm = run.ddm(k, PartitionMode::FeatureKmeans)?;
                    let extra = BTreeMap::from([("k".to_string(), k as f64)]);
                    reports.push(run.score_ensemble(&format!("ddm-k{k}"), &ddm, &Strategy::TopK(1), extra)?);
                }
            }
            ExperimentKind::ClusterAblation => {
                for (arm, mode) in [("feature-kmeans", PartitionMode::FeatureKmeans), ("random", PartitionMode::Random)] {
                    let ddm = run.ddm(config.k, mode)?;
                    reports.push(run.score_ensemble(arm, &ddm, &Strategy::TopK(1), BTreeMap::new())?);
                    reports.push(run.score_ensemble(&format!("{arm}-full"), &ddm, &Strategy::Full, BTreeMap::new())?);
                }
            }
            ExperimentKind::DistillCompare => {
                let ddm = run.ddm(config.k, PartitionMode::FeatureKmeans)?;
                let (student, flops) = run.student(&ddm)?;
                let top1 = PolicyField::new(&ddm.ensemble, Strategy::TopK(1))?;
                let full = PolicyField::new(&ddm.ensemble, Strategy::Full)?;
                let probes = path_probes(&run.train_cloud, &PROBE_TIMES, 64, &config.schedule(), &mut Rng::new(seed).split("probes"))?;
                let extra = BTreeMap::from([
                    ("rms_to_top1".to_string(), flow_rms(&student, &top1, &probes)?),
                    ("rms_to_full".to_string(), flow_rms(&student, &full, &probes)?),
                ]);
                reports.push(run.score_ensemble("teacher-top-1", &ddm, &Strategy::TopK(1), BTreeMap::new())?);
                reports.push(run.score_ensemble("teacher-full", &ddm, &Strategy::Full, BTreeMap::new())?);
                reports.push(run.score_field("student", &student, flops, extra)?);
            }
            ExperimentKind::StrategyTable => {
                let (mono, mono_flops) = run.monolith()?;
                let mut ddm = run.ddm(config.k, PartitionMode::FeatureKmeans)?;
                ddm.ensemble = ddm.ensemble.with_monolith(mono);
                for (name, strategy) in Strategy::table_rows(config.k) {
                    let mut report = run.score_ensemble(&name, &ddm, &strategy, BTreeMap::new())?;
                    if strategy == Strategy::Monolith {
                        report.training_flops = mono_flops;
                    }
                    reports.push(report);
                }
            }
        }
    }
    if let Some(dir) = &config.report_dir {
        write_reports(dir, config.kind.name(), &reports)?;
    }
    Ok(ExperimentOutput { reports })
}

/// Times of the flow-comparison probe grid.
pub const PROBE_TIMES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Probe points drawn from the noising path: for each time, `per_t` rows of
/// `data` pushed to `x_t` with fresh noise.
pub fn path_probes(data: &PointCloud, times: &[f64], per_t: usize, schedule: &Schedule, rng: &mut Rng) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::with_capacity(times.len() * per_t);
    for &t in times {
        schedule.check_t(t)?;
        for _ in 0..per_t {
            let x0 = data.row(rng.below(data.len()));
            let eps = rng.normal_vec(data.dim());
            out.push((schedule.interpolate(x0, &eps, t), t));
        }
    }
    Ok(out)
}

/// Root mean square over probes and coordinates of `a - b`.
pub fn flow_rms(a: &dyn VelocityField, b: &dyn VelocityField, probes: &[(Vec<f64>, f64)]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Argument("no probe points".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, t) in probes {
        let va = a.velocity(x, *t)?;
        let vb = b.velocity(x, *t)?;
        total += va.iter().zip(&vb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        count += va.len();
    }
    Ok((total / count as f64).sqrt())
}

/// An ensemble with the partition that produced it.
pub struct DdmArm {
    pub ensemble: Ensemble,
    pub partition: Partition,
    pub training_flops: u64,
    /// Checkpoint directory key, e.g. `ddm-kmeans-k8`.
    pub key: String,
}

/// Data and settings shared by the arms of one seed.
struct SeedRun<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    train: Dataset,
    train_cloud: PointCloud,
    heldout: PointCloud,
}

impl<'a> SeedRun<'a> {
    fn new(config: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        let generated = generate(&config.shape, config.n_data, config.dim, seed)?;
        let (train_idx, held_idx) = heldout_split(generated.len(), config.heldout_fraction, seed)?;
        if held_idx.is_empty() {
            return Err(Error::Config("held-out split is empty; raise n_data or heldout_fraction".into()));
        }
        let all = Dataset::from_flat(generated.points, config.dim)?;
        let train = all.subset(&train_idx)?;
        let held = all.subset(&held_idx)?;
        Ok(Self {
            config,
            seed,
            train_cloud: PointCloud::new(train.points().to_vec(), config.dim)?,
            heldout: PointCloud::new(held.points().to_vec(), config.dim)?,
            train,
        })
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.config.train.clone()
        }
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.config.sampler
        }
    }

    fn arm_dir(&self, kind: &str, key: &str) -> Option<PathBuf> {
        self.config
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(kind).join(format!("seed-{}", self.seed)).join(key))
    }

    /// Load `<key>/<stem>.json`, or `None` when training is allowed and the
    /// file is absent.
    fn load(&self, key: &str, stem: &str) -> Result<Option<(Checkpoint, u64)>> {
        if self.config.source == CheckpointSource::Train {
            return Ok(None);
        }
        let dir = self.arm_dir("checkpoints", key).expect("validated");
        let path = dir.join(format!("{stem}.json"));
        if !path.exists() {
            return match self.config.source {
                CheckpointSource::Load => Err(Error::Config(format!(
                    "experiment arm '{key}' (seed {}) is missing its checkpoint {}",
                    self.seed,
                    path.display()
                ))),
                _ => Ok(None),
            };
        }
        let ckpt = Checkpoint::load(&path)?;
        let metrics = self.arm_dir("metrics", key).expect("validated").join(format!("{stem}.csv"));
        Ok(Some((ckpt, last_flops(&metrics))))
    }

    fn save(&self, key: &str, stem: &str, out: &TrainOutcome) -> Result<()> {
        if let Some(dir) = self.arm_dir("checkpoints", key) {
            out.checkpoint.save(&dir.join(format!("{stem}.json")))?;
            let metrics = self.arm_dir("metrics", key).expect("same root").join(format!("{stem}.csv"));
            write_atomic(&metrics, out.metrics_csv().as_bytes())?;
        }
        Ok(())
    }

    fn monolith(&self) -> Result<(Box<dyn VelocityField>, u64)> {
        if self.config.analytical {
            let flow = AnalyticalFlow::new(self.train.clone(), self.config.schedule());
            return Ok((Box::new(AnalyticalMarginal(Arc::new(flow))), 0));
        }
        let key = "monolith";
        if let Some((ckpt, flops)) = self.load(key, key)? {
            ckpt.expect(Role::Monolith, 1, self.config.schedule().kind)?;
            return Ok((Box::new(ckpt.model()?), flops));
        }
        let out = train_monolith(&self.train, &self.train_config(), &self.config.model, &WorkerControl::default())?;
        self.save(key, key, &out)?;
        Ok((Box::new(out.checkpoint.model()?), out.training_flops))
    }

    fn partition(&self, k: usize, mode: PartitionMode) -> Result<Partition> {
        match mode {
            PartitionMode::FeatureKmeans => {
                let spec = PartitionSpec {
                    m: self.config.fine_centroids.max(k).min(self.train.len()),
                    ..PartitionSpec::new(k, self.seed)
                };
                two_stage_partition(self.train.points(), self.config.dim, &spec)
            }
            PartitionMode::Random => random_partition(self.train.len(), k, self.seed),
        }
    }

    fn ddm(&self, k: usize, mode: PartitionMode) -> Result<DdmArm> {
        let partition = self.partition(k, mode)?;
        let key = format!(
            "ddm-{}-k{k}",
            match mode {
                PartitionMode::FeatureKmeans => "kmeans",
                PartitionMode::Random => "random",
            }
        );
        let labelled = partition.label(self.train.clone())?;
        if self.config.analytical {
            let flow = AnalyticalFlow::new(labelled, self.config.schedule());
            // Oracles cost nothing; count expert evaluations instead.
            return Ok(DdmArm {
                ensemble: Ensemble::analytical(Arc::new(flow))?.with_ledger(Arc::new(FlopLedger::new(1, 0))),
                partition,
                training_flops: 0,
                key,
            });
        }
        let mut stems: Vec<String> = (0..k).map(|i| format!("expert_{i}")).collect();
        stems.push("router".into());
        let mut loaded = Vec::new();
        for stem in &stems {
            match self.load(&key, stem)? {
                Some(found) => loaded.push(found),
                None => break,
            }
        }
        let (checkpoints, flops): (Vec<Checkpoint>, Vec<u64>) = if loaded.len() == stems.len() {
            loaded.into_iter().unzip()
        } else {
            let mut orch = OrchestrationConfig::new(self.train_config(), self.config.model.clone());
            orch.execution = self.config.execution;
            let outcome = orchestrate_decentralized(&labelled, &partition, &orch, None)?;
            if let Some((worker, err)) = outcome.failures().into_iter().next() {
                return Err(Error::Worker {
                    worker: format!("{key}/{worker}"),
                    reason: err.to_string(),
                });
            }
            let mut outs: Vec<TrainOutcome> = outcome.experts.into_iter().map(|r| r.expect("checked")).collect();
            outs.push(outcome.router.expect("checked"));
            for (stem, out) in stems.iter().zip(&outs) {
                self.save(&key, stem, out)?;
            }
            outs.into_iter().map(|o| (o.checkpoint, o.training_flops)).unzip()
        };
        let schedule = self.config.schedule().kind;
        let mut experts: Vec<Box<dyn VelocityField>> = Vec::with_capacity(k);
        for ckpt in &checkpoints[..k] {
            ckpt.expect(Role::Expert, k, schedule)?;
            experts.push(Box::new(ckpt.model()?));
        }
        let router = &checkpoints[k];
        router.expect(Role::Router, k, schedule)?;
        let ensemble = Ensemble::new(experts, Some(Box::new(MlpRouter(router.model()?))))?;
        let (expert_cost, router_cost) = ensemble.component_costs();
        let ensemble = ensemble.with_ledger(Arc::new(FlopLedger::new(expert_cost, router_cost)));
        Ok(DdmArm {
            ensemble,
            partition,
            training_flops: flops.iter().sum(),
            key,
        })
    }

    /// Dense student distilled from the arm's experts with label-selected
    /// targets. With exact components the minimizer of that regression is
    /// the posterior-weighted expert mixture, which is the marginal flow.
    fn student(&self, teacher: &DdmArm) -> Result<(Box<dyn VelocityField>, u64)> {
        let k = teacher.partition.k;
        if self.config.analytical {
            let flow = AnalyticalFlow::new(self.train.clone(), self.config.schedule());
            return Ok((Box::new(AnalyticalMarginal(Arc::new(flow))), 0));
        }
        let key = format!("student-{}", teacher.key);
        if let Some((ckpt, flops)) = self.load(&key, "student")? {
            ckpt.expect(Role::Student, k, self.config.schedule().kind)?;
            return Ok((Box::new(ckpt.model()?), flops));
        }
        let labelled = teacher.partition.label(self.train.clone())?;
        let config = TrainConfig {
            steps: self.config.distill_steps,
            batch_size: self.config.distill_batch,
            ..self.train_config()
        };
        let out = train_distilled(
            &labelled,
            teacher.ensemble.experts(),
            &config,
            &self.config.model,
            None,
            &WorkerControl::default(),
        )?;
        self.save(&key, "student", &out)?;
        Ok((Box::new(out.checkpoint.model()?), out.training_flops))
    }

    fn score_ensemble(&self, arm: &str, ddm: &DdmArm, strategy: &Strategy, extra: BTreeMap<String, f64>) -> Result<EvalReport> {
        let ledger = ddm.ensemble.ledger().expect("arms carry a ledger");
        let before = ledger.snapshot();
        let labels = &ddm.partition.assignment;
        let samples = sample_ensemble(&ddm.ensemble, strategy, Some(labels), self.config.n_samples, &self.sampler(), &self.config.schedule())?;
        let after = ledger.snapshot();
        let steps = after.steps - before.steps;
        let cost = after.inference_cost - before.inference_cost;
        let per_step = if steps == 0 { 0.0 } else { cost as f64 / steps as f64 };
        self.score(arm, samples, ddm.training_flops, per_step, extra)
    }

    fn score_field(&self, arm: &str, field: &dyn VelocityField, training_flops: u64, extra: BTreeMap<String, f64>) -> Result<EvalReport> {
        let samples = sample(field, self.config.n_samples, &self.sampler(), &self.config.schedule())?;
        self.score(arm, samples, training_flops, field.forward_cost() as f64, extra)
    }

    fn score(&self, arm: &str, samples: SampleSet, training_flops: u64, flops_per_step: f64, extra: BTreeMap<String, f64>) -> Result<EvalReport> {
        let generated = PointCloud::new(samples.points, samples.dim)?;
        // Every arm of a seed is measured along the same projections.
        let mut rng = Rng::new(self.seed).split("metric");
        let value = sliced_wasserstein(&generated, &self.heldout, self.config.n_projections, &mut rng)?;
        let energy = energy_distance(&generated, &self.heldout)?;
        if self.config.svg {
            if let Some(dir) = &self.config.report_dir {
                let title = format!("{} / {arm} / seed {}", self.config.kind.name(), self.seed);
                let path = dir.join(format!("{}_seed-{}_{arm}.svg", self.config.kind.name(), self.seed));
                write_atomic(&path, scatter_svg(&generated, &self.heldout, &title).as_bytes())?;
            }
        }
        Ok(EvalReport {
            experiment: self.config.kind.name().into(),
            arm: arm.into(),
            seed: self.seed,
            metric: PRIMARY_METRIC.into(),
            value,
            energy_distance: energy,
            n_generated: generated.len(),
            n_reference: self.heldout.len(),
            n_projections: self.config.n_projections,
            config_hash: config_hash(&(self.config, self.seed, arm)),
            training_flops,
            flops_per_step,
            extra,
        })
    }
}

fn last_flops(path: &Path) -> u64 {
    fs::read_to_string(path)
        .ok()
        .and_then(|text| {
            text.lines()
                .last()
                .and_then(|l| l.rsplit(',').next())
                .and_then(|v| v.trim().parse().ok())
        })
        .unwrap_or(0)
}
