use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::cli::manifest::{Manifest, RunRecord};
use crate::cli::{ClusterArgs, EvalArgs, FlopsArgs, GenDataArgs, ModelArgs, SampleArgs, TrainArgs};
use crate::data::{generate, Shape};
use crate::ensemble::{
    sample_ensemble, Ensemble, Integrator, MlpRouter, SamplerConfig, Strategy, VelocityField,
};
use crate::error::{Error, Result};
use crate::eval::metrics::{energy_distance, sliced_wasserstein, PointCloud};
use crate::eval::report::{summarize, write_reports, EvalReport, PRIMARY_METRIC};
use crate::eval::{run_experiment, CheckpointSource, ExperimentConfig, ExperimentKind};
use crate::flow::{AnalyticalFlow, Dataset, Schedule, ScheduleKind};
use crate::io::{read_assignment, read_dataset, read_samples, samples_csv, write_atomic, write_dataset, write_json};
use crate::numerics::{Activation, MlpModel, Rng};
use crate::partition::{two_stage_partition, Partition, PartitionMode, PartitionSpec};
use crate::training::{
    config_hash, orchestrate_decentralized, train_distilled, train_expert, train_monolith, train_router,
    Checkpoint, Execution, FlopLedger, ModelConfig, OrchestrationConfig, Role, TrainConfig, TrainOutcome, WorkerControl,
    WorkerId,
};

fn schedule(name: &str, t_min: f64) -> Result<Schedule> {
    let kind = ScheduleKind::parse(name).map_err(|e| Error::Usage(e.to_string()))?;
    Schedule::with_t_min(kind, t_min)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// File-name-safe form of a strategy or arm name.
fn stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn gen_data(a: &GenDataArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    if a.shape == "blobs" && a.k_true.is_none() {
        return Err(Error::Usage("blobs need --k-true".into()));
    }
    let shape = Shape::parse(&a.shape, a.k_true, a.separation, a.std, a.noise)?;
    let g = generate(&shape, a.n, a.dim, a.seed)?;
    let labels = matches!(shape, Shape::Blobs { .. }).then_some(g.labels.as_slice());
    write_dataset(&a.out, &g.points, g.dim, labels)?;
    rec.output(&a.out);
    rec.seed("data", format!("root {}", a.seed));
    println!("wrote {} rows of dimension {} to {}", g.len(), g.dim, a.out.display());
    Ok(Some(sidecar(&a.out, ".manifest.json")))
}

pub fn cluster(a: &ClusterArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    let data = read_dataset(&a.data)?;
    rec.input(&a.data);
    let spec = PartitionSpec {
        k: a.k,
        m: a.m,
        max_iters: a.max_iters,
        seed: a.seed,
        mode: PartitionMode::parse(&a.mode).map_err(|e| Error::Usage(e.to_string()))?,
        ..PartitionSpec::new(a.k, a.seed)
    };
    let part = two_stage_partition(&data.points, data.dim, &spec).map_err(|e| with_file(e, &a.data))?;
    let assignment = a.out.join("assignment.csv");
    let sidecar = a.out.join("partition.json");
    write_atomic(&assignment, crate::io::assignment_csv(&part.assignment).as_bytes())?;
    write_json(
        &sidecar,
        &serde_json::json!({
            "spec": spec,
            "k": part.k,
            "dim": part.dim,
            "counts": part.counts,
            "coarse_centroids": part.coarse_centroids,
            "fine_centroids": part.fine_centroids,
        }),
    )?;
    rec.output(&assignment);
    rec.output(&sidecar);
    rec.seed("partition", format!("root {}", a.seed));
    println!("cluster sizes: {:?}", part.counts);
    Ok(Some(a.out.join("manifest.json")))
}

fn with_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Argument(m) => Error::Argument(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn model_config(m: &ModelArgs) -> Result<ModelConfig> {
    Ok(ModelConfig {
        hidden: m.hidden.clone(),
        activation: Activation::parse(&m.activation).map_err(|e| Error::Usage(e.to_string()))?,
        time_features: m.time_features,
    })
}

/// Dataset plus its partition, with `K` from `--experts` or the file.
fn load_partitioned(data: &Path, assignment: &Path, experts: Option<usize>, rec: &mut RunRecord) -> Result<(Dataset, Partition)> {
    let file = read_dataset(data)?;
    let assign = read_assignment(assignment)?;
    rec.input(data);
    rec.input(assignment);
    if assign.len() != file.len() {
        return Err(Error::Config(format!(
            "{} has {} rows but {} has {}",
            assignment.display(),
            assign.len(),
            data.display(),
            file.len()
        )));
    }
    let max = assign.iter().max().map_or(0, |m| m + 1);
    let k = experts.unwrap_or(max);
    if max > k {
        return Err(Error::Config(format!(
            "{} uses cluster {} but K = {k}",
            assignment.display(),
            max - 1
        )));
    }
    let part = Partition::from_assignment(&file.points, file.dim, assign, k)?;
    if let Some(empty) = part.counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("cluster {empty} of {} is empty", assignment.display())));
    }
    Ok((Dataset::from_flat(file.points, file.dim)?, part))
}

fn save_outcome(run: &Path, file_stem: &str, out: &TrainOutcome, rec: &mut RunRecord) -> Result<()> {
    let ckpt = run.join("checkpoints").join(format!("{file_stem}.json"));
    let metrics = run.join("metrics").join(format!("{file_stem}.csv"));
    out.checkpoint.save(&ckpt)?;
    write_atomic(&metrics, out.metrics_csv().as_bytes())?;
    rec.output(&ckpt);
    rec.output(&metrics);
    println!(
        "{file_stem}: {} steps, {} training FLOPs, final loss {:.5}",
        out.checkpoint.step,
        out.training_flops,
        out.metrics.last().map_or(f64::NAN, |r| r.loss)
    );
    Ok(())
}

fn parse_worker(name: &str) -> Result<WorkerId> {
    if name == "router" {
        return Ok(WorkerId::Router);
    }
    name.strip_prefix("expert-")
        .and_then(|i| i.parse().ok())
        .map(WorkerId::Expert)
        .ok_or_else(|| Error::Usage(format!("unknown worker '{name}' (expected expert-<i> or router)")))
}

pub fn train(a: &TrainArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    let schedule = schedule(&a.schedule, a.model.t_min)?;
    let config = TrainConfig {
        batch_size: a.model.batch_size,
        lr: a.model.lr,
        ema_decay: a.model.ema_decay,
        loss_report_every: a.report_every,
        ..TrainConfig::new(a.steps, a.seed, schedule)
    };
    config.validate()?;
    let model = model_config(&a.model)?;
    let fault = match (&a.fail_worker, a.fail_at) {
        (Some(w), Some(step)) => Some((parse_worker(w)?, WorkerControl::abort_at(step))),
        _ => None,
    };
    let control_for = |id: WorkerId| {
        fault
            .as_ref()
            .filter(|(w, _)| *w == id)
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    };
    let need_partition = |role: &str| {
        a.partition
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("{role} training needs --partition")))
    };
    let manifest_dir = a.run.join("manifest");

    if a.decentralized {
        let (data, part) = load_partitioned(&a.data, need_partition("decentralized")?, a.experts, rec)?;
        let mut oc = OrchestrationConfig::new(config, model);
        oc.execution = if a.threads { Execution::Threaded } else { Execution::Serial };
        oc.out_dir = Some(a.run.clone());
        oc.faults = fault.into_iter().collect();
        let ledger = FlopLedger::new(0, 0);
        let outcome = orchestrate_decentralized(&data, &part, &oc, Some(&ledger))?;
        let mut workers: Vec<WorkerId> = (0..part.k).map(WorkerId::Expert).collect();
        workers.push(WorkerId::Router);
        for id in workers {
            let result = match id {
                WorkerId::Expert(i) => &outcome.experts[i],
                WorkerId::Router => &outcome.router,
            };
            if result.is_ok() {
                rec.output(&a.run.join("checkpoints").join(format!("{}.json", id.file_stem())));
                rec.output(&a.run.join("metrics").join(format!("{}.csv", id.file_stem())));
            }
        }
        let totals = ledger.snapshot();
        let ledger_path = a.run.join("metrics").join("ledger.json");
        write_json(&ledger_path, &totals)?;
        rec.output(&ledger_path);
        rec.seed("expert-<i>", format!("root {} / denoiser / <i>", a.seed));
        rec.seed("router", format!("root {} / router", a.seed));
        println!("{totals}");
        let failures = outcome.failures();
        if let Some((first, err)) = failures.first() {
            let names: Vec<String> = failures.iter().map(|(w, _)| w.to_string()).collect();
            return Err(Error::Worker {
                worker: first.to_string(),
                reason: format!("{err}; failed workers: {}", names.join(", ")),
            });
        }
        println!("trained {} experts and the router", part.k);
        return Ok(Some(manifest_dir.join("train-decentralized.json")));
    }

    let role = Role::parse(a.role.as_deref().expect("clap requires role"))?;
    match role {
        Role::Monolith => {
            let file = read_dataset(&a.data)?;
            rec.input(&a.data);
            let data = Dataset::from_flat(file.points, file.dim)?;
            let out = train_monolith(&data, &config, &model, &WorkerControl::default())?;
            save_outcome(&a.run, "monolith", &out, rec)?;
            rec.seed("monolith", format!("root {} / denoiser / 0", a.seed));
            Ok(Some(manifest_dir.join("train-monolith.json")))
        }
        Role::Expert => {
            let index = a
                .k
                .ok_or_else(|| Error::Usage("expert training needs --k <expert index>".into()))?;
            let (data, part) = load_partitioned(&a.data, need_partition("expert")?, a.experts, rec)?;
            let shard = part.label(data)?.cluster_shard(index).map_err(|_| {
                Error::Usage(format!("expert index {index} out of range for K = {}", part.k))
            })?;
            let id = WorkerId::Expert(index);
            let out = train_expert(&shard, index, part.k, &config, &model, &control_for(id))?;
            save_outcome(&a.run, &id.file_stem(), &out, rec)?;
            rec.seed(&id.to_string(), format!("root {} / denoiser / {index}", a.seed));
            Ok(Some(manifest_dir.join(format!("train-{}.json", id.file_stem()))))
        }
        Role::Router => {
            let (data, part) = load_partitioned(&a.data, need_partition("router")?, a.experts, rec)?;
            let labelled = part.label(data)?;
            let out = train_router(
                &labelled,
                &config,
                &ModelConfig::router_for(&model),
                &control_for(WorkerId::Router),
            )?;
            save_outcome(&a.run, "router", &out, rec)?;
            rec.seed("router", format!("root {} / router", a.seed));
            Ok(Some(manifest_dir.join("train-router.json")))
        }
        Role::Student => {
            let (data, part) = load_partitioned(&a.data, need_partition("distillation")?, a.experts, rec)?;
            let teachers = load_experts(&a.run, part.k, schedule.kind, rec)?;
            let out = train_distilled(&part.label(data)?, &teachers, &config, &model, None, &WorkerControl::default())?;
            save_outcome(&a.run, "student", &out, rec)?;
            rec.seed("student", format!("root {} / student", a.seed));
            Ok(Some(manifest_dir.join("train-student.json")))
        }
    }
}

fn load_checkpoint(path: &Path, role: Role, k: usize, kind: ScheduleKind, rec: &mut RunRecord) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("missing checkpoint {}", path.display())));
    }
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect(role, k, kind).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    rec.input(path);
    Ok(ckpt)
}

fn load_experts(run: &Path, k: usize, kind: ScheduleKind, rec: &mut RunRecord) -> Result<Vec<MlpModel>> {
    (0..k)
        .map(|i| {
            let path = run.join("checkpoints").join(format!("expert_{i}.json"));
            let ckpt = load_checkpoint(&path, Role::Expert, k, kind, rec)?;
            if ckpt.expert != Some(i) {
                return Err(Error::Config(format!("{} is not expert {i}", path.display())));
            }
            ckpt.model()
        })
        .collect()
}

pub fn sample(a: &SampleArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    let sched = schedule(&a.schedule, a.t_min)?;
    let s = &a.strategy;
    let strategy = Strategy::parse(&s.strategy, s.tau, s.p, s.temperature)?;
    let labels = match (&strategy, &a.labels) {
        (Strategy::Oracle, None) => {
            return Err(Error::Usage("the oracle strategy needs --labels <assignment.csv>".into()))
        }
        (_, Some(path)) => {
            rec.input(path);
            Some(read_assignment(path)?)
        }
        _ => None,
    };
    let (ensemble, ledger) = if a.analytical {
        let data = a.data.as_deref().expect("clap requires data");
        let part_file = a.partition.as_deref().expect("clap requires partition");
        let (data, part) = load_partitioned(data, part_file, Some(a.k), rec)?;
        let flow = Arc::new(AnalyticalFlow::new(part.label(data)?, sched));
        let ledger = Arc::new(FlopLedger::new(1, 0));
        (Ensemble::analytical(flow)?.with_ledger(ledger.clone()), ledger)
    } else {
        let experts: Vec<Box<dyn VelocityField>> = load_experts(&a.run, a.k, sched.kind, rec)?
            .into_iter()
            .map(|m| Box::new(m) as Box<dyn VelocityField>)
            .collect();
        let router = if strategy.uses_router() {
            let ckpt = load_checkpoint(&a.run.join("checkpoints/router.json"), Role::Router, a.k, sched.kind, rec)?;
            Some(Box::new(MlpRouter(ckpt.model()?)) as Box<dyn crate::ensemble::Router>)
        } else {
            None
        };
        let mut ens = Ensemble::new(experts, router)?;
        if strategy == Strategy::Monolith {
            let ckpt = load_checkpoint(&a.run.join("checkpoints/monolith.json"), Role::Monolith, 1, sched.kind, rec)?;
            ens = ens.with_monolith(Box::new(ckpt.model()?));
        }
        let (e, r) = ens.component_costs();
        let ledger = Arc::new(FlopLedger::new(e, r));
        (ens.with_ledger(ledger.clone()), ledger)
    };
    if labels.as_ref().is_some_and(|l| l.iter().any(|&c| c >= a.k)) {
        return Err(Error::Config(format!("labels name a cluster outside K = {}", a.k)));
    }
    let sampler = SamplerConfig {
        steps: a.steps,
        integrator: Integrator::parse(&a.integrator).map_err(|e| Error::Usage(e.to_string()))?,
        t_min: a.t_min,
        seed: a.seed,
        record_trajectories: a.trajectories,
    };
    let set = sample_ensemble(&ensemble, &strategy, labels.as_deref(), a.n, &sampler, &sched)?;
    let name = stem(a.name.as_deref().unwrap_or(&strategy.to_string()));
    let dir = a.run.join("samples");
    let out = dir.join(format!("{name}.csv"));
    write_atomic(&out, samples_csv(&set.points, set.dim).as_bytes())?;
    rec.output(&out);
    if a.trajectories {
        let path = dir.join(format!("{name}_trajectories.csv"));
        write_atomic(&path, trajectories_csv(&set).as_bytes())?;
        rec.output(&path);
    }
    let totals = ledger.snapshot();
    let summary = dir.join(format!("{name}.json"));
    write_json(
        &summary,
        &serde_json::json!({
            "strategy": strategy,
            "k": a.k,
            "n": a.n,
            "analytical": a.analytical,
            "sampler": sampler,
            "ledger": totals,
            "cost_per_step": ledger.realized_cost_per_step(),
        }),
    )?;
    rec.output(&summary);
    rec.seed("noise", format!("root {} / noise / <sample>", a.seed));
    println!("{} samples under {strategy} -> {}", set.len(), out.display());
    println!("{totals}");
    Ok(Some(a.run.join("manifest").join(format!("sample-{name}.json"))))
}

fn trajectories_csv(set: &crate::ensemble::SampleSet) -> String {
    let header: Vec<String> = (0..set.dim).map(|d| format!("dim_{d}")).collect();
    let mut out = format!("sample_id,step,t,{}\n", header.join(","));
    for (i, traj) in set.trajectories.iter().enumerate() {
        for p in traj {
            let _ = write!(out, "{i},{},{:?}", p.step, p.t);
            for v in &p.state {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn eval(a: &EvalArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    if let Some(samples) = &a.samples {
        return eval_direct(a, samples, a.reference.as_deref().expect("clap requires reference"), rec);
    }
    let kind = ExperimentKind::parse(a.experiment.as_deref().expect("clap requires experiment"))?;
    let sched = schedule(a.schedule.as_deref().expect("clap requires schedule"), crate::flow::DEFAULT_T_MIN)?;
    let mut c = ExperimentConfig::new(kind, a.seeds.clone(), sched);
    c.k = a.k.expect("clap requires k");
    if let Some(v) = &a.sweep_k {
        c.sweep_k = v.clone();
    }
    if let Some(v) = a.n_data {
        c.n_data = v;
    }
    if let Some(v) = a.train_steps {
        c.train.steps = v;
        c.distill_steps = v;
    }
    if let Some(v) = a.distill_steps {
        c.distill_steps = v;
    }
    if let Some(v) = a.batch_size {
        c.train.batch_size = v;
        c.distill_batch = (v / 4).max(1);
    }
    if let Some(v) = a.lr {
        c.train.lr = v;
    }
    if let Some(v) = a.ema_decay {
        c.train.ema_decay = v;
    }
    if let Some(v) = &a.hidden {
        c.model.hidden = v.clone();
    }
    if let Some(v) = a.steps {
        c.sampler.steps = v;
    }
    if let Some(v) = a.n_samples {
        c.n_samples = v;
    }
    c.n_projections = a.n_projections;
    c.analytical = a.analytical;
    c.source = CheckpointSource::parse(&a.source)?;
    c.svg = a.svg;
    c.execution = if a.threads { Execution::Threaded } else { Execution::Serial };
    c.checkpoint_dir = Some(a.run.clone());
    let reports = a.run.join("reports");
    c.report_dir = Some(reports.clone());
    let out = run_experiment(&c)?;
    for ext in [".csv", "_summary.csv", ".json"] {
        rec.output(&reports.join(format!("{}{ext}", kind.name())));
    }
    for s in &a.seeds {
        rec.seed(&format!("seed-{s}"), format!("root {s} / {{data, denoiser, router, student, noise, metric}}"));
    }
    print_summary(&out.reports);
    Ok(Some(a.run.join("manifest").join(format!("eval-{}.json", kind.name()))))
}

fn print_summary(reports: &[EvalReport]) {
    println!("{:<24} {:>5} {:>14} {:>14} {:>16}", "arm", "seeds", "sliced_w2", "energy", "flops/step");
    for s in summarize(reports) {
        println!(
            "{:<24} {:>5} {:>14.6} {:>14.6} {:>16.1}",
            s.arm, s.seeds, s.mean_value, s.mean_energy_distance, s.mean_flops_per_step
        );
    }
}

fn read_points(path: &Path) -> Result<PointCloud> {
    let head = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (points, dim) = if head.starts_with("sample_id,") {
        read_samples(path)?
    } else {
        let d = read_dataset(path)?;
        (d.points, d.dim)
    };
    PointCloud::new(points, dim)
}

fn eval_direct(a: &EvalArgs, samples: &Path, reference: &Path, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    let gen = read_points(samples)?;
    let refs = read_points(reference)?;
    rec.input(samples);
    rec.input(reference);
    let mut reports = Vec::new();
    for &seed in &a.seeds {
        let mut rng = Rng::new(seed).split("metric");
        reports.push(EvalReport {
            experiment: "direct".into(),
            arm: a.name.clone(),
            seed,
            metric: PRIMARY_METRIC.into(),
            value: sliced_wasserstein(&gen, &refs, a.n_projections, &mut rng)?,
            energy_distance: energy_distance(&gen, &refs)?,
            n_generated: gen.len(),
            n_reference: refs.len(),
            n_projections: a.n_projections,
            config_hash: config_hash(&(samples, reference, seed, a.n_projections)),
            training_flops: 0,
            flops_per_step: 0.0,
            extra: BTreeMap::new(),
        });
    }
    let dir = a.run.join("reports");
    let name = stem(&a.name);
    write_reports(&dir, &name, &reports)?;
    for ext in [".csv", "_summary.csv", ".json"] {
        rec.output(&dir.join(format!("{name}{ext}")));
    }
    print_summary(&reports);
    Ok(Some(a.run.join("manifest").join(format!("eval-{name}.json"))))
}

pub fn flops(a: &FlopsArgs, rec: &mut RunRecord) -> Result<Option<PathBuf>> {
    if a.k == 0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    let ledger = FlopLedger::new(a.expert_gflops, a.router_gflops);
    let mut rows: Vec<(String, Option<u64>)> = Vec::new();
    if let Some(name) = &a.strategy {
        let s = Strategy::parse(name, a.tau, a.p, a.temperature)?;
        s.validate(Some(a.k))?;
        rows.push((s.to_string(), ledger.cost(&s, a.k)));
    }
    if a.table1 || a.strategy.is_none() {
        rows.extend(ledger.table(a.k));
    }
    let mut csv = String::from("strategy,gflops_per_step\n");
    for (name, cost) in &rows {
        match cost {
            Some(c) => {
                println!("{name:<20} {c:>8}");
                let _ = writeln!(csv, "{name},{c}");
            }
            None => {
                println!("{name:<20} {:>8}", "varies");
                let _ = writeln!(csv, "{name},");
            }
        }
    }
    let Some(run) = &a.run else {
        return Ok(None);
    };
    let path = run.join("reports").join("flops.csv");
    write_atomic(&path, csv.as_bytes())?;
    rec.output(&path);
    Ok(Some(run.join("manifest").join("flops.json")))
}

pub fn replay(path: &Path) -> Result<()> {
    let manifest = Manifest::load(path)?;
    let changed = manifest.changed_inputs();
    if !changed.is_empty() {
        return Err(Error::Config(format!(
            "inputs changed since the recorded run: {}",
            changed.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    let mut argv = vec!["dfm".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    let cli = <crate::cli::Cli as clap::Parser>::try_parse_from(&argv)
        .map_err(|e| Error::Config(format!("{}: stored arguments no longer parse: {e}", path.display())))?;
    crate::cli::dispatch(cli.command, &manifest.argv, false)?;
    let differ = manifest.changed_outputs();
    if !differ.is_empty() {
        return Err(Error::Config(format!(
            "replay did not reproduce: {}",
            differ.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    println!("replayed {} and reproduced {} outputs", manifest.command, manifest.outputs.len());
    Ok(())
}
