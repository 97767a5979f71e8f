//! Adam with bias correction, and an exponential moving average of weights.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// Defaults β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self::with_betas(num_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(params.len(), self.m.len(), "adam parameters")?;
        check_len(grads.len(), self.m.len(), "adam gradients")?;
        self.step_count += 1;
        let n = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(n);
        let c2 = 1.0 - self.beta2.powi(n);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    shadow: Vec<f64>,
}

impl EmaState {
    /// Shadow starts as a copy of `params`.
    pub fn new(decay: f64, params: &[f64]) -> Self {
        Self {
            decay,
            shadow: params.to_vec(),
        }
    }

    pub fn shadow(&self) -> &[f64] {
        &self.shadow
    }

    /// `shadow ← decay·shadow + (1 − decay)·params`
    pub fn update(&mut self, params: &[f64]) -> Result<()> {
        check_len(params.len(), self.shadow.len(), "ema parameters")?;
        let keep = 1.0 - self.decay;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = self.decay * *s + keep * p;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut adam = AdamState::with_betas(1, 1e-3, 0.9, 0.999, 1e-12);
        let mut p = [0.5];
        adam.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-12);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(3, 0.1);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..50 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn descends_a_parabola() {
        let mut adam = AdamState::new(1, 0.1);
        let mut theta = [1.0];
        for _ in 0..100 {
            let g = [2.0 * theta[0]];
            adam.step(&mut theta, &g).unwrap();
        }
        assert!(theta[0].abs() < 0.05, "theta = {}", theta[0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = AdamState::new(2, 0.01);
            let mut p = [0.3, -0.7];
            for i in 0..20 {
                let g = [(i as f64).sin(), 0.1 * i as f64];
                adam.step(&mut p, &g).unwrap();
            }
            (p, adam)
        };
        let (pa, a) = run();
        let (pb, b) = run();
        assert_eq!(pa.map(f64::to_bits), pb.map(f64::to_bits));
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(2, 0.1);
        assert!(matches!(
            adam.step(&mut [0.0; 3], &[0.0; 3]),
            Err(Error::Shape { .. })
        ));
        let mut ema = EmaState::new(0.5, &[0.0; 2]);
        assert!(ema.update(&[1.0]).is_err());
    }

    #[test]
    fn ema_zero_decay_copies() {
        let mut ema = EmaState::new(0.0, &[5.0, 6.0]);
        ema.update(&[1.0, 2.0]).unwrap();
        assert_eq!(ema.shadow(), &[1.0, 2.0]);
    }

    #[test]
    fn ema_closed_form() {
        for &(decay, n) in &[(0.9, 37usize), (0.999, 1000)] {
            let (s0, p) = (2.0, -1.5);
            let mut ema = EmaState::new(decay, &[s0]);
            for _ in 0..n {
                ema.update(&[p]).unwrap();
            }
            let dn = decay.powi(n as i32);
            let closed = s0 * dn + p * (1.0 - dn);
            assert!((ema.shadow()[0] - closed).abs() < 1e-9);
        }
    }
}
