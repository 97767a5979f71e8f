use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const DEFAULT_T_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `α = 1 − t`, `σ = t`
    #[default]
    Linear,
    /// `α = cos(πt/2)`, `σ = sin(πt/2)`
    Cosine,
}

impl ScheduleKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "linear" | "rectified" => Ok(ScheduleKind::Linear),
            "cosine" | "vp-cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Argument(format!("unknown schedule '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }
}

/// Corruption path `x_t = α(t)·x_0 + σ(t)·ε`, data at `t = 0`, noise at `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub t_min: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::new(ScheduleKind::Linear)
    }
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self {
            kind,
            t_min: DEFAULT_T_MIN,
        }
    }

    pub fn with_t_min(kind: ScheduleKind, t_min: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::Domain(format!("t_min must lie in (0, 1), got {t_min}")));
        }
        Ok(Self { kind, t_min })
    }

    pub fn linear() -> Self {
        Self::new(ScheduleKind::Linear)
    }

    pub fn cosine() -> Self {
        Self::new(ScheduleKind::Cosine)
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::Cosine => (FRAC_PI_2 * t).cos(),
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::Cosine => (FRAC_PI_2 * t).sin(),
        }
    }

    pub fn alpha_dot(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => -1.0,
            ScheduleKind::Cosine => -FRAC_PI_2 * (FRAC_PI_2 * t).sin(),
        }
    }

    pub fn sigma_dot(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0,
            ScheduleKind::Cosine => FRAC_PI_2 * (FRAC_PI_2 * t).cos(),
        }
    }

    /// Errors unless `t ∈ [t_min, 1]`.
    pub fn check_t(&self, t: f64) -> Result<()> {
        if !(t >= self.t_min && t <= 1.0) {
            return Err(Error::Domain(format!(
                "t = {t} outside [{}, 1]",
                self.t_min
            )));
        }
        Ok(())
    }

    /// `α_t x_0 + σ_t ε`
    pub fn interpolate(&self, x0: &[f64], eps: &[f64], t: f64) -> Vec<f64> {
        let (a, s) = (self.alpha(t), self.sigma(t));
        x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
    }

    /// `α̇_t x_0 + σ̇_t ε`, the velocity of the interpolation path.
    pub fn path_velocity(&self, x0: &[f64], eps: &[f64], t: f64) -> Vec<f64> {
        let (ad, sd) = (self.alpha_dot(t), self.sigma_dot(t));
        x0.iter().zip(eps).map(|(x, e)| ad * x + sd * e).collect()
    }

    /// Invert a velocity prediction into the implied clean point:
    /// `x̂_0 = (σ̇ x_t − σ u) / (σ̇ α − σ α̇)`; for the linear path this is
    /// `x_t − t·u`.
    pub fn implied_x0(&self, x_t: &[f64], velocity: &[f64], t: f64) -> Vec<f64> {
        let (a, s, ad, sd) = (
            self.alpha(t),
            self.sigma(t),
            self.alpha_dot(t),
            self.sigma_dot(t),
        );
        let det = sd * a - s * ad;
        x_t.iter()
            .zip(velocity)
            .map(|(x, u)| (sd * x - s * u) / det)
            .collect()
    }
}

/// Velocity of the path through `x_0` evaluated at `x_t`:
/// `ε = (x_t − α_t x_0)/σ_t`, `u = α̇_t x_0 + σ̇_t ε`.
pub fn conditional_flow(schedule: &Schedule, x_t: &[f64], x0: &[f64], t: f64) -> Result<Vec<f64>> {
    check_len(x0.len(), x_t.len(), "conditional_flow x_0")?;
    schedule.check_t(t)?;
    let (a, s, ad, sd) = (
        schedule.alpha(t),
        schedule.sigma(t),
        schedule.alpha_dot(t),
        schedule.sigma_dot(t),
    );
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(x, x0)| ad * x0 + sd * (x - a * x0) / s)
        .collect())
}
