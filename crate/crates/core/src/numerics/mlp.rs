//! A small time-conditioned feed-forward network with hand-written backprop.
//!
//! Parameters live in one flat `Vec<f64>` so the optimizer, EMA and
//! checkpoint code can treat them uniformly. Per layer the layout is the
//! `d_out x d_in` weight matrix in row-major order followed by `d_out` biases.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::gaussian::{lse_unchecked, softmax};
use crate::numerics::Rng;

pub const DEFAULT_TIME_FEATURES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s + z * s * (1.0 - s)
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Argument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Loss attached to a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `‖output − target‖²`
    SquaredError(Vec<f64>),
    /// `−ln softmax(output)[class]`
    CrossEntropy(usize),
}

impl LossSpec {
    /// Build from a numeric code (0 = squared error, 1 = cross-entropy), as
    /// used across the C ABI.
    pub fn from_code(code: i32, target: &[f64], class: usize) -> Result<Self> {
        match code {
            0 => Ok(LossSpec::SquaredError(target.to_vec())),
            1 => Ok(LossSpec::CrossEntropy(class)),
            other => Err(Error::Argument(format!("unknown loss code {other}"))),
        }
    }
}

/// Sinusoidal time features `[sin 2πkt, cos 2πkt]` for `k = 1..=count/2`.
pub fn time_embedding(t: f64, count: usize) -> impl Iterator<Item = f64> {
    (1..=count / 2).flat_map(move |k| {
        let arg = 2.0 * PI * k as f64 * t;
        [arg.sin(), arg.cos()]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    time_features: usize,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass, reused by backprop.
struct Trace {
    /// `inputs[l]` feeds layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl MlpModel {
    /// A network mapping `data_dim` inputs (plus time features) through
    /// `hidden` widths to `out_dim` outputs, every parameter zero.
    pub fn zeros(
        data_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        time_features: usize,
    ) -> Result<Self> {
        if time_features % 2 != 0 {
            return Err(Error::Argument(format!(
                "time feature count must be even, got {time_features}"
            )));
        }
        let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
        layer_dims.push(data_dim + time_features);
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(out_dim);
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "layer dimensions must be positive: {layer_dims:?}"
            )));
        }
        let count = layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(Self {
            layer_dims,
            activation,
            time_features,
            params: vec![0.0; count],
        })
    }

    /// LeCun-normal weights, zero biases. When `zero_output` is set the final
    /// layer starts at zero, so e.g. a fresh router is exactly uniform.
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        time_features: usize,
        zero_output: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(data_dim, hidden, out_dim, activation, time_features)?;
        let n_layers = model.num_layers();
        let mut offset = 0;
        for l in 0..n_layers {
            let (d_in, d_out) = (model.layer_dims[l], model.layer_dims[l + 1]);
            let scale = 1.0 / (d_in as f64).sqrt();
            let last = l + 1 == n_layers;
            for w in &mut model.params[offset..offset + d_in * d_out] {
                let draw = rng.normal() * scale;
                *w = if last && zero_output { 0.0 } else { draw };
            }
            offset += (d_in + 1) * d_out;
        }
        Ok(model)
    }

    /// Rebuild from a flat parameter vector, validating its length.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        activation: Activation,
        time_features: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!("bad layer dims {layer_dims:?}")));
        }
        if layer_dims[0] < time_features || time_features % 2 != 0 {
            return Err(Error::Argument(format!(
                "time features {time_features} incompatible with input width {}",
                layer_dims[0]
            )));
        }
        let expected: usize = layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        check_len(params.len(), expected, "mlp parameter vector")?;
        Ok(Self {
            layer_dims,
            activation,
            time_features,
            params,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn time_features(&self) -> usize {
        self.time_features
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn data_dim(&self) -> usize {
        self.layer_dims[0] - self.time_features
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(params.len(), self.params.len(), "mlp parameter vector")?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Multiply-add count of one forward pass, counted as 2 FLOPs each.
    pub fn flops_per_forward(&self) -> u64 {
        self.layer_dims
            .windows(2)
            .map(|w| 2 * (w[0] * w[1]) as u64)
            .sum()
    }

    fn input(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len(x.len(), self.data_dim(), "mlp input")?;
        let mut input = Vec::with_capacity(self.layer_dims[0]);
        input.extend_from_slice(x);
        input.extend(time_embedding(t, self.time_features));
        Ok(input)
    }

    fn run(&self, x: &[f64], t: f64, keep: bool) -> Result<Trace> {
        let mut current = self.input(x, t)?;
        let n_layers = self.num_layers();
        let mut inputs = Vec::with_capacity(if keep { n_layers + 1 } else { 0 });
        let mut pre = Vec::with_capacity(if keep { n_layers } else { 0 });
        let mut offset = 0;
        for l in 0..n_layers {
            let (d_in, d_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let weights = &self.params[offset..offset + d_in * d_out];
            let biases = &self.params[offset + d_in * d_out..offset + (d_in + 1) * d_out];
            let mut z: Vec<f64> = biases.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * d_in..(o + 1) * d_in];
                *zo += row.iter().zip(&current).map(|(w, a)| w * a).sum::<f64>();
            }
            offset += (d_in + 1) * d_out;
            let next = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            if keep {
                inputs.push(std::mem::replace(&mut current, next));
                if l + 1 < n_layers {
                    pre.push(z);
                }
            } else {
                current = next;
            }
        }
        inputs.push(current);
        Ok(Trace { inputs, pre })
    }

    /// Network output at `(x, t)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.run(x, t, false)?.inputs.pop().expect("output present"))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn grad(&self, x: &[f64], t: f64, loss: &LossSpec) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let value = self.accumulate_grad(x, t, loss, 1.0, &mut grad)?;
        Ok((value, grad))
    }

    /// Adds `scale * ∂loss/∂θ` into `grad` and returns the unscaled loss.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        t: f64,
        loss: &LossSpec,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_len(grad.len(), self.params.len(), "gradient buffer")?;
        let trace = self.run(x, t, true)?;
        let output = trace.inputs.last().expect("output present");
        let (value, mut delta) = match loss {
            LossSpec::SquaredError(target) => {
                check_len(target.len(), output.len(), "squared-error target")?;
                let diff: Vec<f64> = output.iter().zip(target).map(|(o, y)| o - y).collect();
                let value = diff.iter().map(|d| d * d).sum::<f64>();
                (value, diff.into_iter().map(|d| 2.0 * d * scale).collect::<Vec<_>>())
            }
            LossSpec::CrossEntropy(class) => {
                if *class >= output.len() {
                    return Err(Error::Argument(format!(
                        "class {class} out of range for {} logits",
                        output.len()
                    )));
                }
                let probs = softmax(output);
                let value = lse_unchecked(output.iter().copied()) - output[*class];
                let delta = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| scale * (p - if i == *class { 1.0 } else { 0.0 }))
                    .collect();
                (value, delta)
            }
        };

        let n_layers = self.num_layers();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut acc = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(acc);
            acc += (w[0] + 1) * w[1];
        }
        for l in (0..n_layers).rev() {
            let (d_in, d_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let offset = offsets[l];
            let a_prev = &trace.inputs[l];
            for o in 0..d_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[offset + o * d_in..offset + (o + 1) * d_in];
                for (g, a) in row.iter_mut().zip(a_prev) {
                    *g += d * a;
                }
                grad[offset + d_in * d_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[offset..offset + d_in * d_out];
            let z_prev = &trace.pre[l - 1];
            let mut next = vec![0.0; d_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o * d_in..(o + 1) * d_in];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for i in 0..d_in {
                next[i] *= self.activation.derivative(z_prev[i], a_prev[i]);
            }
            delta = next;
        }
        Ok(value)
    }
}
