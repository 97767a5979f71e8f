//! Log-space helpers for isotropic Gaussians and categorical distributions.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};

/// Log-density of an isotropic Gaussian `N(mean, var * I)` at `x`.
pub fn gaussian_log_pdf(x: &[f64], mean: &[f64], var: f64) -> Result<f64> {
    check_len(x.len(), mean.len(), "gaussian_log_pdf mean")?;
    if !(var > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {var}")));
    }
    Ok(log_pdf_unchecked(x, mean, var))
}

#[inline]
pub(crate) fn log_pdf_unchecked(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let sq = sq_dist(x, mean);
    -0.5 * x.len() as f64 * (2.0 * PI * var).ln() - sq / (2.0 * var)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `ln Σ exp(v_i)` with max-shift. Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("log_sum_exp of an empty list".into()));
    }
    Ok(lse_unchecked(values.iter().copied()))
}

pub(crate) fn lse_unchecked(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn standard_normal_values() {
        let v = gaussian_log_pdf(&[0.0], &[0.0], 1.0).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        let v = gaussian_log_pdf(&[1.0], &[0.0], 1.0).unwrap();
        assert!((v + 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            gaussian_log_pdf(&[0.0], &[0.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            gaussian_log_pdf(&[0.0, 1.0], &[0.0], 1.0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(log_sum_exp(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn density_integrates_to_one() {
        // trapezoid rule over +-12 sd
        for &(mean, var) in &[(0.0, 1.0), (1.5, 0.3), (-2.0, 4.0)] {
            let sd: f64 = f64::sqrt(var);
            let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                total += w * gaussian_log_pdf(&[x], &[mean], var).unwrap().exp();
            }
            assert!((total * h - 1.0).abs() < 1e-6, "integral {}", total * h);
        }
    }

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((log_sum_exp(&[1000.0, 1000.0]).unwrap() - 1000.693_147_180_56).abs() < 1e-9);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn lse_matches_naive_sum() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let v: Vec<f64> = (0..10).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!((log_sum_exp(&v).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0; 8]);
        assert!(p.iter().all(|&x| x == 0.125));
    }

    proptest::proptest! {
        #[test]
        fn lse_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            proptest::prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
