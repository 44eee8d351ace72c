//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Hidden layers use the configured activation; the output layer is always
//! affine (identity activation). Weights are stored row-major `[out, in]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamVector, Segment};
use crate::error::{FedFgError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Layer widths `[input, hidden..., output]` plus the hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
    prefix: String,
    layers: Vec<LayerShape>,
    layout: Layout,
}

impl MlpSpec {
    /// `prefix` namespaces the parameter segments (`{prefix}.{layer}.weight`).
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let prefix = prefix.into();
        if widths.len() < 2 {
            return Err(FedFgError::invalid(format!(
                "MLP `{prefix}` needs at least input and output widths"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(FedFgError::invalid(format!(
                "MLP `{prefix}` has a zero-width layer"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut segments = Vec::with_capacity(2 * (widths.len() - 1));
        let mut offset = 0;
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            layers.push(LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
            segments.push(Segment::new(format!("{prefix}.{l}.weight"), vec![fan_out, fan_in]));
            segments.push(Segment::new(format!("{prefix}.{l}.bias"), vec![fan_out]));
        }
        Ok(Self {
            widths,
            activation,
            prefix,
            layers,
            layout: Layout::new(segments),
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng::seeded(seed);
        let mut values = vec![0.0; self.param_count()];
        self.init_into(&mut values, &mut rng);
        ParamVector::new(self.layout.clone(), values).expect("layout sized")
    }

    pub(crate) fn init_into<R: Rng>(&self, values: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let n = layer.fan_in * layer.fan_out;
            for w in &mut values[layer.weight_offset..layer.weight_offset + n] {
                *w = rng.random_range(-bound..bound);
            }
        }
    }

    fn check_input(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(FedFgError::DimensionMismatch {
                context: "mlp params",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if x.len() != self.input_width() {
            return Err(FedFgError::DimensionMismatch {
                context: "mlp input",
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass on raw parameter values.
    pub fn forward_raw(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(params, x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, params, &a);
            if l != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        if params.layout() != &self.layout {
            return Err(FedFgError::LayoutMismatch("mlp forward"));
        }
        self.forward_raw(params.values(), x)
    }

    /// Forward pass that keeps what backpropagation needs.
    pub fn forward_trace(&self, params: &[f64], x: &[f64]) -> Result<Trace> {
        self.check_input(params, x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, params, &a);
            let next = if l != last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(Trace { inputs, pre, output: a })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`,
    /// and returns `d loss / d input`.
    pub fn backprop(&self, params: &[f64], trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.param_count());
        debug_assert_eq!(grad_out.len(), self.output_width());
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                let z = &trace.pre[l];
                // Output of layer l is the input of layer l + 1.
                let a = &trace.inputs[l + 1];
                for ((d, &zv), &av) in delta.iter_mut().zip(z).zip(a) {
                    *d *= self.activation.derivative(zv, av);
                }
            }
            let input = &trace.inputs[l];
            for o in 0..layer.fan_out {
                let d = delta[o];
                grad[layer.bias_offset + o] += d;
                if d != 0.0 {
                    let row = layer.weight_offset + o * layer.fan_in;
                    for (g, &x) in grad[row..row + layer.fan_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let mut upstream = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = layer.weight_offset + o * layer.fan_in;
                for (u, &w) in upstream.iter_mut().zip(&params[row..row + layer.fan_in]) {
                    *u += d * w;
                }
            }
            delta = upstream;
        }
        delta
    }
}

fn affine(layer: &LayerShape, params: &[f64], x: &[f64]) -> Vec<f64> {
    (0..layer.fan_out)
        .map(|o| {
            let row = layer.weight_offset + o * layer.fan_in;
            let dot: f64 = params[row..row + layer.fan_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum();
            dot + params[layer.bias_offset + o]
        })
        .collect()
}

/// Cached activations from [`MlpSpec::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Mean softmax cross-entropy over a batch and its exact parameter gradient.
pub fn backward(spec: &MlpSpec, params: &ParamVector, batch: &[(&[f64], usize)]) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(FedFgError::invalid("backward on an empty batch"));
    }
    if params.layout() != spec.layout() {
        return Err(FedFgError::LayoutMismatch("mlp backward"));
    }
    let mut grad = ParamVector::zeros(spec.layout().clone());
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for &(x, y) in batch {
        let trace = spec.forward_trace(params.values(), x)?;
        let (loss, mut g) = super::loss::softmax_cross_entropy(trace.output(), y)?;
        total += loss;
        g.iter_mut().for_each(|v| *v *= scale);
        spec.backprop(params.values(), &trace, &g, grad.values_mut());
    }
    Ok((total * scale, grad))
}
