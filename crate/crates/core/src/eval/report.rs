//! Evaluation reports and their CSV, JSON and SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::metrics::PointCloud;
use crate::io::{write_atomic, write_json};

/// Name recorded for the primary metric.
pub const PRIMARY_METRIC: &str = "sliced_wasserstein (FID stand-in)";

/// One evaluated arm of an experiment for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub arm: String,
    pub seed: u64,
    pub metric: String,
    /// Sliced Wasserstein distance to the held-out data.
    pub value: f64,
    pub energy_distance: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub n_projections: usize,
    pub config_hash: String,
    /// Training FLOPs of every model the arm uses, router included.
    pub training_flops: u64,
    /// Mean FLOPs per sampler evaluation, from the ledger.
    pub flops_per_step: f64,
    /// Experiment-specific numbers, such as flow RMS against a teacher.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// Seed-averaged view of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub mean_value: f64,
    pub mean_energy_distance: f64,
    pub mean_training_flops: f64,
    pub mean_flops_per_step: f64,
}

pub fn summarize(reports: &[EvalReport]) -> Vec<ArmSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.arm.as_str()) {
            order.push(&r.arm);
        }
    }
    order
        .into_iter()
        .map(|arm| {
            let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.arm == arm).collect();
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&EvalReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            ArmSummary {
                arm: arm.to_string(),
                seeds: rows.len(),
                mean_value: mean(&|r| r.value),
                mean_energy_distance: mean(&|r| r.energy_distance),
                mean_training_flops: mean(&|r| r.training_flops as f64),
                mean_flops_per_step: mean(&|r| r.flops_per_step),
            }
        })
        .collect()
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut extra_keys: Vec<&str> = Vec::new();
    for r in reports {
        for k in r.extra.keys() {
            if !extra_keys.contains(&k.as_str()) {
                extra_keys.push(k);
            }
        }
    }
    let mut out = String::from(
        "experiment,arm,seed,sliced_wasserstein,energy_distance,n_generated,n_reference,training_flops,flops_per_step,config_hash",
    );
    for k in &extra_keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{},{},{},{:?},{:?},{},{},{},{:?},{}",
            r.experiment,
            r.arm,
            r.seed,
            r.value,
            r.energy_distance,
            r.n_generated,
            r.n_reference,
            r.training_flops,
            r.flops_per_step,
            r.config_hash
        );
        for k in &extra_keys {
            out.push(',');
            if let Some(v) = r.extra.get(*k) {
                let _ = write!(out, "{v:?}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summary: &[ArmSummary]) -> String {
    let mut out = String::from("arm,seeds,mean_sliced_wasserstein,mean_energy_distance,mean_training_flops,mean_flops_per_step\n");
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?}",
            s.arm, s.seeds, s.mean_value, s.mean_energy_distance, s.mean_training_flops, s.mean_flops_per_step
        );
    }
    out
}

/// Write `<stem>.csv`, `<stem>_summary.csv` and `<stem>.json` into `dir`.
pub fn write_reports(dir: &Path, stem: &str, reports: &[EvalReport]) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.csv")), reports_csv(reports).as_bytes())?;
    write_atomic(
        &dir.join(format!("{stem}_summary.csv")),
        summary_csv(&summarize(reports)).as_bytes(),
    )?;
    write_json(&dir.join(format!("{stem}.json")), &reports)
}

/// Scatter of the first two coordinates: reference points in grey under the
/// generated points in blue.
pub fn scatter_svg(generated: &PointCloud, reference: &PointCloud, title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let coords = |c: &PointCloud| -> Vec<(f64, f64)> {
        c.rows()
            .map(|r| (r[0], if r.len() > 1 { r[1] } else { 0.0 }))
            .collect()
    };
    let g = coords(generated);
    let r = coords(reference);
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in g.iter().chain(&r) {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let px = |x: f64| PAD + (x - lo_x) / span * (SIZE - 2.0 * PAD);
    let py = |y: f64| SIZE - PAD - (y - lo_y) / span * (SIZE - 2.0 * PAD);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        escape(title)
    );
    for (pts, color) in [(&r, "#999999"), (&g, "#1f5fbf")] {
        let _ = writeln!(out, "<g fill=\"{color}\" fill-opacity=\"0.5\">");
        for &(x, y) in pts.iter() {
            let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\"/>", px(x), py(y));
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(arm: &str, seed: u64, value: f64) -> EvalReport {
        EvalReport {
            experiment: "x".into(),
            arm: arm.into(),
            seed,
            metric: PRIMARY_METRIC.into(),
            value,
            energy_distance: value / 2.0,
            n_generated: 10,
            n_reference: 5,
            n_projections: 4,
            config_hash: "abc".into(),
            training_flops: 100,
            flops_per_step: 3.0,
            extra: BTreeMap::from([("rms".to_string(), 0.5)]),
        }
    }

    #[test]
    fn summary_averages_per_arm_in_order() {
        let rs = vec![report("b", 0, 1.0), report("a", 0, 2.0), report("b", 1, 3.0)];
        let s = summarize(&rs);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].arm.as_str(), s[0].seeds, s[0].mean_value), ("b", 2, 2.0));
        assert_eq!(s[1].mean_value, 2.0);
        let csv = reports_csv(&rs);
        assert!(csv.lines().next().unwrap().ends_with(",rms"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![report("a", 0, 0.1)];
        write_reports(dir.path(), "exp", &rs).unwrap();
        let back: Vec<EvalReport> = crate::io::read_json(&dir.path().join("exp.json")).unwrap();
        assert_eq!(back, rs);
        assert!(dir.path().join("exp_summary.csv").exists());
    }

    #[test]
    fn svg_has_one_circle_per_point() {
        let g = PointCloud::new(vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        let r = PointCloud::new(vec![0.5, 0.5], 2).unwrap();
        let svg = scatter_svg(&g, &r, "a < b");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt; b"));
    }
}
