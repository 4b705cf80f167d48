//! Residual feedforward policy network.
//!
//! The network computes only the learned correction `phi_theta(x)`; callers add
//! it to their backup policy. Its final affine layer starts at zero so a freshly
//! initialized network reproduces the backup exactly.
//!
//! Parameter layout (row-major weights followed by bias, layer by layer):
//!
//! ```text
//! input layer   : hidden_width x input_dim,  hidden_width
//! block 1..=B   : hidden_width x hidden_width, hidden_width
//! output layer  : output_dim x hidden_width, output_dim
//! ```
//!
//! Hidden layers apply the activation; blocks optionally add a skip connection
//! `h <- h + act(W h + b)`. The output layer is linear.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ScpoError};
use crate::params::ParamVector;

/// Samples per parallel chunk when accumulating batch gradients. Fixed so the
/// summation order (and therefore the result) is independent of thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

fn default_width() -> usize {
    64
}

fn default_blocks() -> usize {
    7
}

fn default_residual() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Add an identity skip around each hidden block.
    #[serde(default = "default_residual")]
    pub residual_blocks: bool,
    #[serde(default)]
    pub rng_seed: u64,
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden_width: usize, num_blocks: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_width,
            num_blocks,
            activation: Activation::Tanh,
            residual_blocks: true,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_residual_blocks(mut self, residual: bool) -> Self {
        self.residual_blocks = residual;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden_width", self.hidden_width),
            ("num_blocks", self.num_blocks),
        ] {
            if v == 0 {
                return Err(ScpoError::Config(format!("net.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (i, o, w, b) = (
            self.input_dim,
            self.output_dim,
            self.hidden_width,
            self.num_blocks,
        );
        w * (i + 1) + b * w * (w + 1) + o * (w + 1)
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.num_blocks + 2);
        dims.push((self.input_dim, self.hidden_width));
        dims.extend(std::iter::repeat_n(
            (self.hidden_width, self.hidden_width),
            self.num_blocks,
        ));
        dims.push((self.hidden_width, self.output_dim));
        let mut offset = 0;
        dims.into_iter()
            .map(|(fan_in, fan_out)| {
                let shape = LayerShape {
                    fan_in,
                    fan_out,
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    /// Range of the zero-initialized final affine layer.
    pub fn output_layer_range(&self) -> Range<usize> {
        let d = self.param_count();
        d - self.output_dim * (self.hidden_width + 1)..d
    }
}

/// Borrowed view of a network evaluated at arbitrary parameters.
#[derive(Debug, Clone, Copy)]
pub struct NetRef<'a> {
    spec: &'a NetSpec,
    layers: &'a [LayerShape],
    params: &'a [f64],
}

struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Activation of each hidden layer (before the skip is added).
    act: Vec<Vec<f64>>,
}

fn affine(params: &[f64], shape: &LayerShape, x: &[f64], out: &mut Vec<f64>) {
    let w = &params[shape.weights()];
    let b = &params[shape.bias()];
    out.clear();
    out.extend(w.chunks_exact(shape.fan_in).zip(b).map(|(row, bias)| {
        row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + bias
    }));
}

impl<'a> NetRef<'a> {
    pub fn spec(&self) -> &NetSpec {
        self.spec
    }

    pub fn params(&self) -> &[f64] {
        self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.spec.input_dim, x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let (hidden, output) = self.layers.split_at(self.layers.len() - 1);
        let act = self.spec.activation;
        let mut h = x.to_vec();
        let mut z = Vec::with_capacity(self.spec.hidden_width);
        for (l, shape) in hidden.iter().enumerate() {
            affine(self.params, shape, &h, &mut z);
            if l > 0 && self.spec.residual_blocks {
                for (hi, zi) in h.iter_mut().zip(&z) {
                    *hi += act.apply(*zi);
                }
            } else {
                h.clear();
                h.extend(z.iter().map(|&zi| act.apply(zi)));
            }
        }
        let mut y = Vec::with_capacity(self.spec.output_dim);
        affine(self.params, &output[0], &h, &mut y);
        y
    }

    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        let n_hidden = self.layers.len() - 1;
        let act = self.spec.activation;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n_hidden + 1),
            pre: Vec::with_capacity(n_hidden),
            act: Vec::with_capacity(n_hidden),
        };
        let mut h = x.to_vec();
        for (l, shape) in self.layers[..n_hidden].iter().enumerate() {
            let mut z = Vec::with_capacity(shape.fan_out);
            affine(self.params, shape, &h, &mut z);
            let a: Vec<f64> = z.iter().map(|&zi| act.apply(zi)).collect();
            let next = if l > 0 && self.spec.residual_blocks {
                h.iter().zip(&a).map(|(hi, ai)| hi + ai).collect()
            } else {
                a.clone()
            };
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.pre.push(z);
            cache.act.push(a);
        }
        let mut y = Vec::with_capacity(self.spec.output_dim);
        affine(self.params, &self.layers[n_hidden], &h, &mut y);
        cache.inputs.push(h);
        (y, cache)
    }

    /// Accumulate `J(x)^T dy` into `grad`, where `J` is the Jacobian of the
    /// output with respect to the parameters.
    fn backward(&self, cache: &ForwardCache, dy: &[f64], grad: &mut [f64]) {
        let n_hidden = self.layers.len() - 1;
        let act = self.spec.activation;
        let mut upstream = dy.to_vec();
        for l in (0..=n_hidden).rev() {
            let shape = &self.layers[l];
            let input = &cache.inputs[l];
            let dz: Vec<f64> = if l == n_hidden {
                upstream.clone()
            } else {
                upstream
                    .iter()
                    .zip(&cache.pre[l])
                    .zip(&cache.act[l])
                    .map(|((u, &z), &a)| u * act.derivative(z, a))
                    .collect()
            };
            let w_range = shape.weights();
            let b_range = shape.bias();
            for (o, &dzo) in dz.iter().enumerate() {
                if dzo == 0.0 {
                    continue;
                }
                let row = &mut grad[w_range.start + o * shape.fan_in..][..shape.fan_in];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += dzo * xi;
                }
                grad[b_range.start + o] += dzo;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_range];
            let mut down = vec![0.0; shape.fan_in];
            for (row, &dzo) in w.chunks_exact(shape.fan_in).zip(&dz) {
                if dzo == 0.0 {
                    continue;
                }
                for (d, wi) in down.iter_mut().zip(row) {
                    *d += wi * dzo;
                }
            }
            if l < n_hidden && l > 0 && self.spec.residual_blocks {
                for (d, u) in down.iter_mut().zip(&upstream) {
                    *d += u;
                }
            }
            upstream = down;
        }
    }

    /// Sum over samples of a per-output loss and its parameter gradient.
    ///
    /// `loss_fn(i, y)` receives the sample index and the network output and
    /// returns `(loss_i, d loss_i / d y)`. Results are not normalized.
    pub fn backprop_sum<F>(&self, inputs: &[Vec<f64>], loss_fn: F) -> Result<(f64, ParamVector)>
    where
        F: Fn(usize, &[f64]) -> (f64, Vec<f64>) + Sync,
    {
        for x in inputs {
            check_dim("network input", self.spec.input_dim, x.len())?;
        }
        let d = self.params.len();
        let partials: Vec<(f64, Vec<f64>)> = inputs
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(chunk, xs)| {
                let mut grad = vec![0.0; d];
                let mut loss = 0.0;
                for (j, x) in xs.iter().enumerate() {
                    let (y, cache) = self.forward_cached(x);
                    let (li, dy) = loss_fn(chunk * GRAD_CHUNK + j, &y);
                    loss += li;
                    if dy.iter().any(|&v| v != 0.0) {
                        self.backward(&cache, &dy, &mut grad);
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; d];
        for (l, g) in partials {
            total += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((total, ParamVector::new(grad)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    MeanSquaredError,
}

/// A network shape together with its current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    spec: NetSpec,
    layers: Vec<LayerShape>,
    params: ParamVector,
}

impl PolicyNet {
    /// Seeded uniform fan-in initialization of the hidden layers; the final
    /// layer's weights and bias are zero so the network outputs exactly zero.
    pub fn init_zero_residual(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let mut params = vec![0.0; spec.param_count()];
        for shape in &layers[..layers.len() - 1] {
            let bound = 1.0 / (shape.fan_in as f64).sqrt();
            for v in &mut params[shape.offset..shape.offset + shape.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            spec,
            layers,
            params: ParamVector::new(params),
        })
    }

    pub fn from_params(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_dim("parameter vector", spec.param_count(), params.len())?;
        let layers = spec.layers();
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_dim("parameter vector", self.params.len(), params.len())?;
        self.params = params;
        Ok(())
    }

    pub fn view(&self) -> NetRef<'_> {
        self.view_with(self.params.as_slice())
    }

    /// View this architecture evaluated at other parameters.
    pub fn view_with<'a>(&'a self, params: &'a [f64]) -> NetRef<'a> {
        assert_eq!(params.len(), self.params.len(), "parameter length mismatch");
        NetRef {
            spec: &self.spec,
            layers: &self.layers,
            params,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.view().forward(x)
    }

    /// Mean batch loss and its exact gradient.
    pub fn loss_and_grad(
        &self,
        batch: &[(Vec<f64>, Vec<f64>)],
        kind: LossKind,
    ) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(ScpoError::EmptyBatch);
        }
        for (_, t) in batch {
            check_dim("target", self.spec.output_dim, t.len())?;
        }
        let inputs: Vec<Vec<f64>> = batch.iter().map(|(x, _)| x.clone()).collect();
        let n = batch.len() as f64;
        let (sum, grad) = match kind {
            LossKind::MeanSquaredError => self.view().backprop_sum(&inputs, |i, y| {
                let target = &batch[i].1;
                let mut loss = 0.0;
                let dy = y
                    .iter()
                    .zip(target)
                    .map(|(yi, ti)| {
                        let r = yi - ti;
                        loss += r * r;
                        2.0 * r / n
                    })
                    .collect();
                (loss, dy)
            })?,
        };
        Ok((sum / n, grad))
    }

    pub fn loss(&self, batch: &[(Vec<f64>, Vec<f64>)], kind: LossKind) -> Result<f64> {
        if batch.is_empty() {
            return Err(ScpoError::EmptyBatch);
        }
        let view = self.view();
        let mut sum = 0.0;
        for (x, t) in batch {
            let y = view.forward(x)?;
            check_dim("target", self.spec.output_dim, t.len())?;
            sum += match kind {
                LossKind::MeanSquaredError => y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            };
        }
        Ok(sum / batch.len() as f64)
    }
}
