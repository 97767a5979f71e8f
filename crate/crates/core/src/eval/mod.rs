//! Sample-quality metrics, seed matching and the experiment drivers.

pub mod experiments;
pub mod metrics;
pub mod report;
pub mod seed_match;

pub use experiments::{
    flow_rms, path_probes, run_experiment, CheckpointSource, DdmArm, ExperimentConfig, ExperimentKind,
    ExperimentOutput, PROBE_TIMES,
};
pub use metrics::{energy_distance, sliced_wasserstein, wasserstein_1d_sorted, PointCloud};
pub use report::{summarize, write_reports, ArmSummary, EvalReport};
pub use seed_match::{seed_match_score, seed_match_sets, SeedMatch};
