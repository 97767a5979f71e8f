use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;
use std::sync::Arc;

use dfm_core::ensemble::{sample_ensemble, Ensemble, SamplerConfig, Strategy};
use dfm_core::flow::{AnalyticalFlow, Dataset, Schedule};
use dfm_core::partition::Partition;
use dfm_core::training::{orchestrate_decentralized, ModelConfig, OrchestrationConfig, TrainConfig};
use dfm_ffi::*;

fn points() -> (Vec<f64>, Vec<usize>) {
    let pts = vec![-4.0, 0.5, -3.5, -0.5, -4.5, 0.0, 4.0, 1.0, 3.0, -1.0, 5.0, 0.2];
    (pts, vec![0, 0, 0, 1, 1, 1])
}

fn flow_handle(schedule: DfmSchedule) -> *mut DfmFlow {
    let (pts, labels) = points();
    let mut flow = ptr::null_mut();
    let s = unsafe { dfm_flow_new(pts.as_ptr(), 6, 2, labels.as_ptr(), 2, schedule, &mut flow) };
    assert_eq!(s, DfmStatus::Ok);
    flow
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dfm_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn flow_calls_match_the_library() {
    let (pts, labels) = points();
    let ds = Dataset::from_flat(pts, 2).unwrap().with_labels(labels, 2).unwrap();
    let core = AnalyticalFlow::new(ds, Schedule::cosine());
    let flow = flow_handle(DfmSchedule::Cosine);
    let x = [0.3, -0.7];
    let mut v = [0.0; 2];
    let mut post = [0.0; 2];
    unsafe {
        assert_eq!(dfm_flow_marginal(flow, x.as_ptr(), 0.4, v.as_mut_ptr()), DfmStatus::Ok);
        assert_eq!(v.to_vec(), core.marginal_flow(&x, 0.4).unwrap());
        assert_eq!(dfm_flow_score(flow, x.as_ptr(), 0.4, v.as_mut_ptr()), DfmStatus::Ok);
        assert_eq!(v.to_vec(), core.marginal_score(&x, 0.4).unwrap());
        assert_eq!(dfm_flow_expert(flow, 1, x.as_ptr(), 0.4, v.as_mut_ptr()), DfmStatus::Ok);
        assert_eq!(v.to_vec(), core.expert_flow(1, &x, 0.4).unwrap());
        assert_eq!(dfm_flow_posterior(flow, x.as_ptr(), 0.4, post.as_mut_ptr()), DfmStatus::Ok);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(dfm_flow_expert(flow, 5, x.as_ptr(), 0.4, v.as_mut_ptr()), DfmStatus::InvalidArgument);
        dfm_flow_free(flow);
    }
}

#[test]
fn null_and_invalid_inputs_report_status_and_message() {
    let mut flow = ptr::null_mut();
    let pts = [0.0, f64::NAN];
    unsafe {
        assert_eq!(
            dfm_flow_new(ptr::null(), 3, 2, ptr::null(), 0, DfmSchedule::Linear, &mut flow),
            DfmStatus::NullPointer
        );
        assert_eq!(last_error(), "points is null");
        assert_ne!(
            dfm_flow_new(pts.as_ptr(), 1, 2, ptr::null(), 0, DfmSchedule::Linear, &mut flow),
            DfmStatus::Ok
        );
        assert!(flow.is_null());
        let mut v = [0.0; 2];
        assert_eq!(dfm_flow_marginal(ptr::null(), pts.as_ptr(), 0.5, v.as_mut_ptr()), DfmStatus::NullPointer);
        dfm_flow_free(ptr::null_mut());
        dfm_ensemble_free(ptr::null_mut());
        assert_eq!(dfm_ensemble_num_experts(ptr::null()), 0);
    }
}

#[test]
fn strategy_costs_follow_the_published_table() {
    let cost = |name: &str| -> (DfmStatus, u64) {
        let c = CString::new(name).unwrap();
        let mut out = 0;
        let s = unsafe { dfm_strategy_cost(308, 26, 8, c.as_ptr(), &mut out) };
        (s, out)
    };
    assert_eq!(cost("monolith"), (DfmStatus::Ok, 308));
    assert_eq!(cost("top-1"), (DfmStatus::Ok, 334));
    assert_eq!(cost("top-2"), (DfmStatus::Ok, 642));
    assert_eq!(cost("top-3"), (DfmStatus::Ok, 950));
    assert_eq!(cost("full"), (DfmStatus::Ok, 2490));
    assert_eq!(cost("threshold").0, DfmStatus::InvalidArgument);
    assert_eq!(cost("top-9").0, DfmStatus::InvalidArgument);
    assert_eq!(cost("bogus").0, DfmStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
}

#[test]
fn analytical_sampling_matches_the_library() {
    let flow = flow_handle(DfmSchedule::Linear);
    let mut ens = ptr::null_mut();
    let mut out = vec![0.0; 2 * 16];
    let full = CString::new("full").unwrap();
    let oracle = CString::new("oracle").unwrap();
    unsafe {
        assert_eq!(dfm_ensemble_from_flow(flow, &mut ens), DfmStatus::Ok);
        dfm_flow_free(flow);
        assert_eq!(dfm_ensemble_num_experts(ens), 2);
        let s = dfm_ensemble_sample(ens, full.as_ptr(), f64::NAN, f64::NAN, ptr::null(), 0, 16, 20, 3, out.as_mut_ptr());
        assert_eq!(s, DfmStatus::Ok);
        let s = dfm_ensemble_sample(ens, oracle.as_ptr(), f64::NAN, f64::NAN, ptr::null(), 0, 16, 20, 3, out.as_mut_ptr());
        assert_eq!(s, DfmStatus::InvalidArgument);
        dfm_ensemble_sample(ens, full.as_ptr(), f64::NAN, f64::NAN, ptr::null(), 0, 16, 20, 3, out.as_mut_ptr());
        dfm_ensemble_free(ens);
    }
    let (pts, labels) = points();
    let ds = Dataset::from_flat(pts, 2).unwrap().with_labels(labels, 2).unwrap();
    let core = Ensemble::analytical(Arc::new(AnalyticalFlow::new(ds, Schedule::linear()))).unwrap();
    let cfg = SamplerConfig {
        steps: 20,
        ..SamplerConfig::new(3)
    };
    let expected = sample_ensemble(&core, &Strategy::Full, None, 16, &cfg, &Schedule::linear()).unwrap();
    assert_eq!(out, expected.points);
}

#[test]
fn checkpoints_load_and_mismatches_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (pts, labels) = points();
    let ds = Dataset::from_flat(pts.clone(), 2).unwrap();
    let part = Partition::from_assignment(&pts, 2, labels, 2).unwrap();
    let train = TrainConfig {
        batch_size: 4,
        lr: 1e-2,
        ema_decay: 0.5,
        ..TrainConfig::new(5, 1, Schedule::linear())
    };
    let mut cfg = OrchestrationConfig::new(
        train,
        ModelConfig {
            hidden: vec![8],
            ..ModelConfig::default()
        },
    );
    cfg.out_dir = Some(dir.path().to_path_buf());
    assert!(orchestrate_decentralized(&ds, &part, &cfg, None).unwrap().is_complete());

    let run = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut ens = ptr::null_mut();
    let top1 = CString::new("top-1").unwrap();
    let mut out = vec![0.0; 2 * 4];
    unsafe {
        assert_eq!(dfm_ensemble_load(run.as_ptr(), 2, DfmSchedule::Linear, &mut ens), DfmStatus::Ok);
        let s = dfm_ensemble_sample(ens, top1.as_ptr(), f64::NAN, f64::NAN, ptr::null(), 0, 4, 5, 0, out.as_mut_ptr());
        assert_eq!(s, DfmStatus::Ok);
        assert!(out.iter().all(|v| v.is_finite()));
        dfm_ensemble_free(ens);
        let mut bad = ptr::null_mut();
        assert_eq!(dfm_ensemble_load(run.as_ptr(), 2, DfmSchedule::Cosine, &mut bad), DfmStatus::Config);
        assert_eq!(dfm_ensemble_load(run.as_ptr(), 3, DfmSchedule::Linear, &mut bad), DfmStatus::Config);
        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(dfm_ensemble_load(missing.as_ptr(), 2, DfmSchedule::Linear, &mut bad), DfmStatus::Io);
        assert!(bad.is_null());
    }
}

#[test]
fn sliced_wasserstein_of_a_unit_shift() {
    let a = [0.0];
    let b = [1.0];
    let mut out = 0.0;
    let s = unsafe { dfm_sliced_wasserstein(a.as_ptr(), 1, b.as_ptr(), 1, 1, 4, 0, &mut out) };
    assert_eq!(s, DfmStatus::Ok);
    assert!((out - 1.0).abs() < 1e-15);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dfm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_interface_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dfm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "dfm_flow_new",
        "dfm_flow_free",
        "dfm_ensemble_load",
        "dfm_ensemble_sample",
        "dfm_strategy_cost",
        "dfm_last_error",
        "typedef struct DfmFlow DfmFlow",
        "DFM_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // Syntax-check the header with the system C compiler when there is one.
    let probe = Command::new("cc").arg("--version").output();
    if probe.map(|o| o.status.success()).unwrap_or(false) {
        let out = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
            .arg(&header)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
