//! Conditional flow matching in extractor feature space.
//!
//! The generator is a time- and label-conditioned vector field
//! `v(h, t, y)`: the input is `[h, t, embed(y)]` where `embed` is a learnable
//! table. It is trained by regressing `v` onto the straight-line target flow
//! `h1 - h0` and sampled by integrating `dh/dt = v` from `t = 0` to `t = 1`
//! with forward Euler, starting from `h(0) = z ~ N(0, I)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FedFgError, Result};
use crate::nn::{Activation, Layout, MlpSpec, ParamVector, Segment, TrainConfig};
use crate::rng::{self, SimRng};

pub const EMBED_SEGMENT: &str = "generator.embed";

/// One draw from the interpolation path between a prior sample and a real feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPathSample {
    pub t: f64,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub h_t: Vec<f64>,
    /// Target flow `h1 - h0`.
    pub u: Vec<f64>,
    pub sigma: f64,
}

impl FlowPathSample {
    /// Builds the path point from explicit draws.
    pub fn from_draws(t: f64, h0: Vec<f64>, h1: Vec<f64>, sigma: f64, eps: &[f64]) -> Result<Self> {
        if h0.len() != h1.len() || eps.len() != h1.len() {
            return Err(FedFgError::DimensionMismatch {
                context: "flow path",
                expected: h1.len(),
                got: if h0.len() != h1.len() { h0.len() } else { eps.len() },
            });
        }
        if !(sigma >= 0.0) {
            return Err(FedFgError::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let mut h_t = Vec::with_capacity(h1.len());
        let mut u = Vec::with_capacity(h1.len());
        for i in 0..h1.len() {
            let mut x = t * h1[i] + (1.0 - t) * h0[i];
            if sigma != 0.0 {
                x += sigma * eps[i];
            }
            h_t.push(x);
            u.push(h1[i] - h0[i]);
        }
        Ok(Self { t, h0, h1, h_t, u, sigma })
    }
}

/// Draws `t ~ U(0,1)`, `h0, eps ~ N(0, I)` and forms the path point for `h1`.
pub fn sample_path<R: Rng + ?Sized>(h1: &[f64], sigma: f64, rng: &mut R) -> Result<FlowPathSample> {
    let t: f64 = rng.random();
    let h0: Vec<f64> = (0..h1.len()).map(|_| rng.sample(StandardNormal)).collect();
    let eps: Vec<f64> = if sigma > 0.0 {
        (0..h1.len()).map(|_| rng.sample(StandardNormal)).collect()
    } else {
        vec![0.0; h1.len()]
    };
    FlowPathSample::from_draws(t, h0, h1.to_vec(), sigma, &eps)
}

/// Shape of the conditional vector-field network.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    feature_dim: usize,
    embed_dim: usize,
    classes: usize,
    net: MlpSpec,
    layout: Layout,
}

impl VectorFieldSpec {
    pub fn new(
        feature_dim: usize,
        embed_dim: usize,
        classes: usize,
        hidden: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(FedFgError::invalid("vector field needs at least one hidden layer"));
        }
        if feature_dim == 0 || classes < 2 {
            return Err(FedFgError::invalid("vector field needs d >= 1 and K >= 2"));
        }
        let mut widths = vec![feature_dim + 1 + embed_dim];
        widths.extend_from_slice(hidden);
        widths.push(feature_dim);
        let net = MlpSpec::new("generator.field", widths, activation)?;
        let mut segments = vec![Segment::new(EMBED_SEGMENT, vec![classes, embed_dim])];
        segments.extend(net.layout().segments().iter().cloned());
        Ok(Self {
            feature_dim,
            embed_dim,
            classes,
            net,
            layout: Layout::new(segments),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn embed_len(&self) -> usize {
        self.classes * self.embed_dim
    }

    /// Network weights use the fan-in uniform scheme; the label table is `N(0, 1)`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng::seeded(seed);
        let mut values = vec![0.0; self.layout.total_len()];
        let split = self.embed_len();
        for v in &mut values[..split] {
            *v = rng.sample(StandardNormal);
        }
        self.net.init_into(&mut values[split..], &mut rng);
        ParamVector::new(self.layout.clone(), values).expect("layout sized")
    }

    fn check(&self, params: &ParamVector, h: &[f64], label: usize) -> Result<()> {
        if params.layout() != &self.layout {
            return Err(FedFgError::LayoutMismatch("vector field"));
        }
        if h.len() != self.feature_dim {
            return Err(FedFgError::DimensionMismatch {
                context: "vector field state",
                expected: self.feature_dim,
                got: h.len(),
            });
        }
        if label >= self.classes {
            return Err(FedFgError::invalid(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    fn net_input(&self, params: &[f64], h: &[f64], t: f64, label: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.input_width());
        input.extend_from_slice(h);
        input.push(t);
        let row = label * self.embed_dim;
        input.extend_from_slice(&params[row..row + self.embed_dim]);
        input
    }

    /// Evaluates `v(h, t, y)`.
    pub fn velocity(&self, params: &ParamVector, h: &[f64], t: f64, label: usize) -> Result<Vec<f64>> {
        self.check(params, h, label)?;
        Ok(self.velocity_unchecked(params.values(), h, t, label))
    }

    fn velocity_unchecked(&self, params: &[f64], h: &[f64], t: f64, label: usize) -> Vec<f64> {
        let input = self.net_input(params, h, t, label);
        self.net
            .forward_raw(&params[self.embed_len()..], &input)
            .expect("checked dimensions")
    }

    /// Accumulates `scale * d||v - u||^2 / d params` into `grad`; returns the squared error.
    fn accumulate_fm(&self, params: &[f64], path: &FlowPathSample, label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let split = self.embed_len();
        let input = self.net_input(params, &path.h_t, path.t, label);
        let trace = self
            .net
            .forward_trace(&params[split..], &input)
            .expect("checked dimensions");
        let mut loss = 0.0;
        let grad_out: Vec<f64> = trace
            .output()
            .iter()
            .zip(&path.u)
            .map(|(v, u)| {
                let diff = v - u;
                loss += diff * diff;
                2.0 * diff * scale
            })
            .collect();
        let (embed_grad, net_grad) = grad.split_at_mut(split);
        let grad_in = self.net.backprop(&params[split..], &trace, &grad_out, net_grad);
        let row = label * self.embed_dim;
        let offset = self.feature_dim + 1;
        for k in 0..self.embed_dim {
            embed_grad[row + k] += grad_in[offset + k];
        }
        loss
    }
}

/// Anything that can be integrated by the Euler sampler.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn velocity(&self, h: &[f64], t: f64, label: usize) -> Vec<f64>;
}

/// A parameterised generator bound to its network shape.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    spec: &'a VectorFieldSpec,
    params: &'a ParamVector,
}

impl<'a> Generator<'a> {
    pub fn new(spec: &'a VectorFieldSpec, params: &'a ParamVector) -> Result<Self> {
        if params.layout() != spec.layout() {
            return Err(FedFgError::LayoutMismatch("generator"));
        }
        Ok(Self { spec, params })
    }
}

impl VectorField for Generator<'_> {
    fn dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn velocity(&self, h: &[f64], t: f64, label: usize) -> Vec<f64> {
        self.spec.velocity_unchecked(self.params.values(), h, t, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub euler_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { euler_steps: 20 }
    }
}

/// Forward Euler from `h(0) = z` to `h(1)` with `euler_steps` uniform steps.
pub fn integrate<F: VectorField + ?Sized>(field: &F, z: &[f64], label: usize, sampler: SamplerConfig) -> Vec<f64> {
    let steps = sampler.euler_steps.max(1);
    let dt = 1.0 / steps as f64;
    let mut h = z.to_vec();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = field.velocity(&h, t, label);
        for (x, dv) in h.iter_mut().zip(&v) {
            *x += dt * dv;
        }
    }
    h
}

/// Generates a synthetic feature for `label` from the prior sample `z`.
pub fn generate(
    params: &ParamVector,
    spec: &VectorFieldSpec,
    label: usize,
    z: &[f64],
    sampler: SamplerConfig,
) -> Result<Vec<f64>> {
    spec.check(params, z, label)?;
    if sampler.euler_steps == 0 {
        return Err(FedFgError::invalid("euler_steps must be >= 1"));
    }
    Ok(integrate(&Generator::new(spec, params)?, z, label, sampler))
}

/// Squared flow-matching error on one path sample and its gradient with
/// respect to the generator parameters only.
pub fn fm_loss(
    params: &ParamVector,
    spec: &VectorFieldSpec,
    path: &FlowPathSample,
    label: usize,
) -> Result<(f64, ParamVector)> {
    spec.check(params, &path.h_t, label)?;
    if path.u.len() != spec.feature_dim {
        return Err(FedFgError::DimensionMismatch {
            context: "target flow",
            expected: spec.feature_dim,
            got: path.u.len(),
        });
    }
    let mut grad = ParamVector::zeros(spec.layout.clone());
    let loss = spec.accumulate_fm(params.values(), path, label, 1.0, grad.values_mut());
    Ok((loss, grad))
}

/// Mean flow-matching loss over a batch of path samples and its gradient.
pub fn fm_batch_loss(
    params: &ParamVector,
    spec: &VectorFieldSpec,
    batch: &[(FlowPathSample, usize)],
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(FedFgError::invalid("flow-matching loss on an empty batch"));
    }
    let mut grad = ParamVector::zeros(spec.layout.clone());
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (path, label) in batch {
        spec.check(params, &path.h_t, *label)?;
        total += spec.accumulate_fm(params.values(), path, *label, scale, grad.values_mut());
    }
    Ok((total * scale, grad))
}

/// Result of generator training.
#[derive(Debug, Clone)]
pub struct FlowTraining {
    pub params: ParamVector,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD on the flow-matching objective over precomputed features.
pub fn train_generator(
    params: &ParamVector,
    spec: &VectorFieldSpec,
    features: &[(Vec<f64>, usize)],
    cfg: &TrainConfig,
    sigma: f64,
    rng: &mut SimRng,
) -> Result<FlowTraining> {
    if features.is_empty() {
        return Err(FedFgError::invalid("generator training on an empty dataset"));
    }
    if params.layout() != spec.layout() {
        return Err(FedFgError::LayoutMismatch("train_generator"));
    }
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.flow_epochs);
    let batch_size = cfg.batch_size.max(1);
    for _ in 0..cfg.flow_epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (h1, y) = &features[i];
                batch.push((sample_path(h1, sigma, rng)?, *y));
            }
            let (loss, grad) = fm_batch_loss(&current, spec, &batch)?;
            if !loss.is_finite() {
                return Err(FedFgError::NonFinite("flow-matching loss"));
            }
            current.axpy(-cfg.eta2, &grad)?;
            epoch_total += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_total / batches as f64);
    }
    Ok(FlowTraining {
        params: current,
        epoch_losses,
    })
}
