use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_NUCLEUS_P: f64 = 0.9;

/// Test-time rule for turning router probabilities into expert weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Every expert, weighted by the router.
    Full,
    /// The `k` most probable experts, renormalized.
    TopK(usize),
    /// `n_active` distinct experts drawn from the tempered router, equal weights.
    Sample { n_active: usize, temperature: f64 },
    /// One expert drawn from the smallest tempered prefix with mass `≥ p`.
    Nucleus { p: f64, temperature: f64 },
    /// Experts with probability `≥ τ`, renormalized; top-1 if none qualify.
    Threshold(f64),
    /// The expert named by the trajectory's cluster label; no router.
    Oracle,
    /// Bypass the ensemble and use a single dense model.
    Monolith,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Full => f.write_str("full"),
            Strategy::TopK(k) => write!(f, "top-{k}"),
            Strategy::Sample {
                n_active,
                temperature,
            } if *temperature == 1.0 => write!(f, "sample-{n_active}"),
            Strategy::Sample {
                n_active,
                temperature,
            } => write!(f, "sample-{n_active}(T={temperature})"),
            Strategy::Nucleus { p, temperature } => write!(f, "nucleus(p={p},T={temperature})"),
            Strategy::Threshold(tau) => write!(f, "threshold-{tau}"),
            Strategy::Oracle => f.write_str("oracle"),
            Strategy::Monolith => f.write_str("monolith"),
        }
    }
}

impl Strategy {
    /// Parse a strategy name as used on the command line: `full`, `top-2`,
    /// `sample-1`, `nucleus`, `threshold` (with `tau`) or `threshold-0.05`,
    /// `oracle`, `monolith`.
    pub fn parse(name: &str, tau: Option<f64>, p: Option<f64>, temperature: Option<f64>) -> Result<Self> {
        let temperature = temperature.unwrap_or(1.0);
        let number = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Usage(format!("bad count in strategy '{name}'")))
        };
        let s = match name {
            "full" => Strategy::Full,
            "oracle" => Strategy::Oracle,
            "monolith" => Strategy::Monolith,
            "nucleus" => Strategy::Nucleus {
                p: p.unwrap_or(DEFAULT_NUCLEUS_P),
                temperature,
            },
            "threshold" => Strategy::Threshold(
                tau.ok_or_else(|| Error::Usage("threshold strategy needs --tau".into()))?,
            ),
            _ => {
                if let Some(k) = name.strip_prefix("top-") {
                    Strategy::TopK(number(k)?)
                } else if let Some(n) = name.strip_prefix("sample-") {
                    Strategy::Sample {
                        n_active: number(n)?,
                        temperature,
                    }
                } else if let Some(v) = name.strip_prefix("threshold-") {
                    Strategy::Threshold(
                        v.parse()
                            .map_err(|_| Error::Usage(format!("bad threshold in '{name}'")))?,
                    )
                } else {
                    return Err(Error::Usage(format!("unknown strategy '{name}'")));
                }
            }
        };
        s.validate(None)?;
        Ok(s)
    }

    /// Check parameters; with `k` also check counts against the ensemble size.
    pub fn validate(&self, k: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        match *self {
            Strategy::TopK(n) | Strategy::Sample { n_active: n, .. } if n == 0 => {
                bad(format!("{self}: need at least one active expert"))
            }
            Strategy::TopK(n) | Strategy::Sample { n_active: n, .. } if k.is_some_and(|k| n > k) => {
                bad(format!("{self}: more active experts than K = {}", k.unwrap_or(0)))
            }
            Strategy::Sample { temperature, .. } | Strategy::Nucleus { temperature, .. }
                if !(temperature > 0.0 && temperature.is_finite()) =>
            {
                bad(format!("temperature must be positive, got {temperature}"))
            }
            Strategy::Nucleus { p, .. } if !(p > 0.0 && p <= 1.0) => bad(format!("nucleus p must lie in (0, 1], got {p}")),
            Strategy::Threshold(tau) if !(0.0..1.0).contains(&tau) => {
                bad(format!("threshold must lie in [0, 1), got {tau}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the router runs at every step.
    pub fn uses_router(&self) -> bool {
        !matches!(self, Strategy::Oracle | Strategy::Monolith)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Strategy::Sample { .. } | Strategy::Nucleus { .. })
    }

    /// Experts evaluated per step, or `None` when it depends on the run.
    pub fn active_experts(&self, k: usize) -> Option<usize> {
        match *self {
            Strategy::Full => Some(k),
            Strategy::TopK(n) => Some(n.min(k)),
            Strategy::Sample { n_active, .. } => Some(n_active.min(k)),
            Strategy::Nucleus { .. } | Strategy::Oracle | Strategy::Monolith => Some(1),
            Strategy::Threshold(_) => None,
        }
    }

    /// The strategy-cost table rows in their published order.
    pub fn table_rows(k: usize) -> Vec<(String, Strategy)> {
        let mut rows = vec![
            ("Monolith".to_string(), Strategy::Monolith),
            ("Oracle".to_string(), Strategy::Oracle),
            ("Full".to_string(), Strategy::Full),
        ];
        for n in 1..=3.min(k) {
            rows.push((format!("Top-{n}"), Strategy::TopK(n)));
        }
        for n in 1..=3.min(k) {
            rows.push((
                format!("Sample-{n}"),
                Strategy::Sample {
                    n_active: n,
                    temperature: 1.0,
                },
            ));
        }
        for tau in [0.01, 0.05, 0.1] {
            rows.push((format!("Threshold-{tau}"), Strategy::Threshold(tau)));
        }
        for temperature in [0.5, 1.0, 2.0] {
            rows.push((
                format!("Nucleus (T={temperature:.1})"),
                Strategy::Nucleus {
                    p: DEFAULT_NUCLEUS_P,
                    temperature,
                },
            ));
        }
        rows
    }
}

/// Check that `probs` lies on the simplex within `1e-9`.
pub fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Argument("empty probability vector".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < -1e-12) {
        return Err(Error::Argument(format!("not a probability vector: {probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// `softmax(ln p / T)`; `T = 1` returns the input unchanged.
pub fn temper(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Indices sorted by decreasing probability, ties to the lower index.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn renormalized(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; probs.len()];
    let total: f64 = keep.iter().map(|&i| probs[i]).sum();
    if total > 0.0 {
        for &i in keep {
            w[i] = probs[i] / total;
        }
    } else {
        for &i in keep {
            w[i] = 1.0 / keep.len() as f64;
        }
    }
    w
}

/// Expert weights for one evaluation: a length-`K` vector on the simplex
/// whose support is the set of experts to run.
pub fn select_experts(probs: &[f64], strategy: &Strategy, rng: &mut Rng, label: Option<usize>) -> Result<Vec<f64>> {
    let k = probs.len();
    strategy.validate(Some(k))?;
    if *strategy == Strategy::Oracle {
        let label = label.ok_or_else(|| Error::Argument("oracle selection needs a cluster label".into()))?;
        if label >= k {
            return Err(Error::Argument(format!("label {label} out of range for K = {k}")));
        }
        let mut w = vec![0.0; k];
        w[label] = 1.0;
        return Ok(w);
    }
    check_simplex(probs)?;
    let w = match *strategy {
        Strategy::Full => probs.to_vec(),
        Strategy::TopK(n) => renormalized(probs, &ranked(probs)[..n]),
        Strategy::Sample {
            n_active,
            temperature,
        } => {
            let mut remaining = temper(probs, temperature);
            let mut chosen = Vec::with_capacity(n_active);
            for _ in 0..n_active {
                let pick = match rng.weighted_index(&remaining) {
                    Some(i) => i,
                    // Only zero-probability experts left: lowest unchosen index.
                    None => (0..k).find(|i| !chosen.contains(i)).expect("n_active <= K"),
                };
                remaining[pick] = 0.0;
                chosen.push(pick);
            }
            let mut w = vec![0.0; k];
            for i in chosen {
                w[i] = 1.0 / n_active as f64;
            }
            w
        }
        Strategy::Nucleus { p, temperature } => {
            let tempered = temper(probs, temperature);
            let order = ranked(&tempered);
            let mut cum = 0.0;
            let mut prefix = Vec::new();
            for &i in &order {
                prefix.push(i);
                cum += tempered[i];
                if cum >= p - 1e-12 {
                    break;
                }
            }
            let weights: Vec<f64> = prefix.iter().map(|&i| tempered[i]).collect();
            let pick = prefix[rng.weighted_index(&weights).unwrap_or(0)];
            let mut w = vec![0.0; k];
            w[pick] = 1.0;
            w
        }
        Strategy::Threshold(tau) => {
            let keep: Vec<usize> = (0..k).filter(|&i| probs[i] >= tau).collect();
            if keep.is_empty() {
                renormalized(probs, &ranked(probs)[..1])
            } else {
                renormalized(probs, &keep)
            }
        }
        Strategy::Oracle => unreachable!("handled above"),
        Strategy::Monolith => {
            return Err(Error::Argument("the monolith strategy selects no experts".into()));
        }
    };
    Ok(w)
}
