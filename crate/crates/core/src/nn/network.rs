//! Declarative layer stacks and their trainable state.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{self, ConvShape};
use super::optim::AdamState;
use super::tensor::{Scalar, Tensor2D};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// Same-padded 1D convolution over time.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_width: usize,
        activation: Activation,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Mean over time, `T × C → 1 × C`.
    GlobalAvgPool,
    /// `T × C → 1 × (T·C)`.
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_width: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_width,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            inputs,
            outputs,
            activation,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::Conv1d { activation, .. } | LayerSpec::Dense { activation, .. } => {
                Some(activation)
            }
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. })
    }

    /// `(weight count, bias count, fan-in)`.
    fn param_shape(&self) -> (usize, usize, usize) {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                ..
            } => (
                kernel_width * in_channels * out_channels,
                out_channels,
                kernel_width * in_channels,
            ),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => (inputs * outputs, outputs, inputs),
            _ => (0, 0, 0),
        }
    }

    /// Output shape for an input of `rows × cols`.
    pub fn output_shape(&self, (rows, cols): (usize, usize)) -> Result<(usize, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                ..
            } => {
                if kernel_width == 0 {
                    return Err(Error::dim("conv kernel width must be at least 1"));
                }
                if cols != in_channels {
                    return Err(Error::dim(format!(
                        "conv expects {in_channels} channels, got {cols}"
                    )));
                }
                if rows == 0 {
                    return Err(Error::dim("conv input has zero time steps"));
                }
                Ok((rows, out_channels))
            }
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                if rows != 1 || cols != inputs {
                    return Err(Error::dim(format!(
                        "dense expects a 1x{inputs} vector, got {rows}x{cols}"
                    )));
                }
                Ok((1, outputs))
            }
            LayerSpec::GlobalAvgPool => {
                if rows == 0 {
                    return Err(Error::dim("cannot pool an empty sequence"));
                }
                Ok((1, cols))
            }
            LayerSpec::Flatten => Ok((1, rows * cols)),
        }
    }
}

/// Ordered layer list plus the number of leading layers excluded from updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub frozen_prefix: usize,
    pub leaky_slope: f32,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            frozen_prefix: 0,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn with_frozen_prefix(mut self, frozen_prefix: usize) -> Self {
        self.frozen_prefix = frozen_prefix;
        self
    }

    /// Checks what can be checked without knowing the time length: channel
    /// chaining between neighbours, the freeze bound and the slope range.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("network has no layers"));
        }
        if self.frozen_prefix > self.layers.len() {
            return Err(Error::validation(format!(
                "frozen prefix {} exceeds {} layers",
                self.frozen_prefix,
                self.layers.len()
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::validation(format!(
                "leaky slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        // Width of the current tensor's columns, and whether it is still a sequence.
        let mut width: Option<usize> = None;
        let mut sequence = true;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_width,
                    ..
                } => {
                    if kernel_width == 0 || in_channels == 0 || out_channels == 0 {
                        return Err(Error::validation(format!("layer {i}: empty conv")));
                    }
                    if !sequence {
                        return Err(Error::validation(format!(
                            "layer {i}: conv after the sequence was reduced to a vector"
                        )));
                    }
                    if let Some(w) = width {
                        if w != in_channels {
                            return Err(Error::validation(format!(
                                "layer {i}: conv expects {in_channels} channels, previous layer yields {w}"
                            )));
                        }
                    }
                    width = Some(out_channels);
                }
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => {
                    if inputs == 0 || outputs == 0 {
                        return Err(Error::validation(format!("layer {i}: empty dense")));
                    }
                    if let (Some(w), false) = (width, sequence) {
                        if w != inputs {
                            return Err(Error::validation(format!(
                                "layer {i}: dense expects {inputs} inputs, previous layer yields {w}"
                            )));
                        }
                    }
                    if sequence && i > 0 && width.is_some() {
                        return Err(Error::validation(format!(
                            "layer {i}: dense applied to a sequence; pool or flatten first"
                        )));
                    }
                    sequence = false;
                    width = Some(outputs);
                }
                LayerSpec::GlobalAvgPool => {
                    if !sequence {
                        return Err(Error::validation(format!("layer {i}: pooling a vector")));
                    }
                    sequence = false;
                }
                LayerSpec::Flatten => {
                    // Width depends on the runtime time length.
                    sequence = false;
                    width = None;
                }
            }
        }
        Ok(())
    }

    /// Shapes after each layer for a given input shape.
    pub fn shapes(&self, input: (usize, usize)) -> Result<Vec<(usize, usize)>> {
        let mut cur = input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = layer.output_shape(cur)?;
            out.push(cur);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b, _) = l.param_shape();
                w + b
            })
            .sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers[self.frozen_prefix.min(self.layers.len())..]
            .iter()
            .map(|l| {
                let (w, b, _) = l.param_shape();
                w + b
            })
            .sum()
    }
}

/// Weight and bias buffers of one layer; both empty for parameterless layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<S = f32> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> LayerParams<S> {
    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            weight: vec![S::zero(); self.weight.len()],
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn fill_zero(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = S::zero());
        self.bias.iter_mut().for_each(|v| *v = S::zero());
    }

    /// Weights then biases, flat.
    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub(crate) fn get_flat_mut(&mut self, idx: usize) -> &mut S {
        if idx < self.weight.len() {
            &mut self.weight[idx]
        } else {
            &mut self.bias[idx - self.weight.len()]
        }
    }
}

/// Activations recorded by a forward pass: per layer, its input and (for
/// layers with an activation) its pre-activation output.
#[derive(Debug, Clone)]
pub(crate) struct Trace<S> {
    inputs: Vec<Tensor2D<S>>,
    pre: Vec<Option<Tensor2D<S>>>,
}

/// A network's parameters, gradient slots and optimizer moments.
#[derive(Debug, Clone)]
pub struct ModelState<S = f32> {
    spec: NetworkSpec,
    params: Vec<LayerParams<S>>,
    grads: Vec<LayerParams<S>>,
    pub(crate) opt: AdamState<S>,
    seed: u64,
    trace: Option<Trace<S>>,
}

impl<S: Scalar> ModelState<S> {
    /// Fresh parameters drawn uniformly from `±√(1/fan_in)` with a seeded stream.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .map(|layer| {
                let (nw, nb, fan_in) = layer.param_shape();
                if nw == 0 {
                    return LayerParams::default();
                }
                let bound = (1.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let mut draw = |n: usize| -> Vec<S> {
                    (0..n)
                        .map(|_| S::from_f64(dist.sample(&mut rng) as f32 as f64).unwrap())
                        .collect()
                };
                let weight = draw(nw);
                let bias = draw(nb);
                LayerParams { weight, bias }
            })
            .collect();
        Ok(Self::from_parts(spec, params, seed))
    }

    pub(crate) fn from_parts(spec: NetworkSpec, params: Vec<LayerParams<S>>, seed: u64) -> Self {
        let grads: Vec<_> = params.iter().map(LayerParams::zeros_like).collect();
        let opt = AdamState::new(&params);
        Self {
            spec,
            params,
            grads,
            opt,
            seed,
            trace: None,
        }
    }

    /// Builds a state from explicit parameters, checking every buffer's length.
    pub fn with_params(spec: NetworkSpec, params: Vec<LayerParams<S>>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::dim(format!(
                "{} parameter sets for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params).enumerate() {
            let (nw, nb, _) = layer.param_shape();
            if p.weight.len() != nw || p.bias.len() != nb {
                return Err(Error::dim(format!(
                    "layer {i}: expected {nw} weights and {nb} biases, got {} and {}",
                    p.weight.len(),
                    p.bias.len()
                )));
            }
        }
        Ok(Self::from_parts(spec, params, seed))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[LayerParams<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[LayerParams<S>] {
        &self.grads
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn frozen_prefix(&self) -> usize {
        self.spec.frozen_prefix
    }

    pub fn set_frozen_prefix(&mut self, frozen_prefix: usize) -> Result<()> {
        if frozen_prefix > self.spec.layers.len() {
            return Err(Error::validation("frozen prefix exceeds layer count"));
        }
        self.spec.frozen_prefix = frozen_prefix;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    /// Copy of the first `n` layers with fresh gradient and optimizer slots.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n > self.spec.layers.len() {
            return Err(Error::validation(format!(
                "prefix of {n} layers from a {}-layer network",
                self.spec.layers.len()
            )));
        }
        let spec = NetworkSpec {
            layers: self.spec.layers[..n].to_vec(),
            frozen_prefix: self.spec.frozen_prefix.min(n),
            leaky_slope: self.spec.leaky_slope,
        };
        Ok(Self::from_parts(spec, self.params[..n].to_vec(), self.seed))
    }

    pub fn cast<T: Scalar>(&self) -> ModelState<T> {
        let conv = |v: &Vec<S>| -> Vec<T> {
            v.iter()
                .map(|x| T::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        let params = self
            .params
            .iter()
            .map(|p| LayerParams {
                weight: conv(&p.weight),
                bias: conv(&p.bias),
            })
            .collect();
        ModelState::from_parts(self.spec.clone(), params, self.seed)
    }

    /// SHA-256 over the little-endian bytes of the parameters of layers `range`.
    pub fn param_digest(&self, range: std::ops::Range<usize>) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for p in &self.params[range] {
            for v in p.iter() {
                hasher.update(v.to_f64().unwrap().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(LayerParams::fill_zero);
    }

    /// Forward pass that records activations for a following [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor2D<S>) -> Result<Vec<S>> {
        let (out, trace) = self.run(input, true)?;
        self.trace = trace;
        Ok(out.into_vec())
    }

    /// Forward pass without recording; leaves any pending trace untouched.
    pub fn infer(&self, input: &Tensor2D<S>) -> Result<Vec<S>> {
        Ok(self.run(input, false)?.0.into_vec())
    }

    /// Output tensors of every layer (post-activation), for shape inspection.
    pub fn layer_outputs(&self, input: &Tensor2D<S>) -> Result<Vec<Tensor2D<S>>> {
        let (out, trace) = self.run(input, true)?;
        let trace = trace.expect("recorded trace");
        let mut outs: Vec<_> = trace.inputs.into_iter().skip(1).collect();
        outs.push(out);
        Ok(outs)
    }

    /// Signs of every leaky pre-activation, in layer order.
    pub fn activation_pattern(&self, input: &Tensor2D<S>) -> Result<Vec<bool>> {
        let (_, trace) = self.run(input, true)?;
        let trace = trace.expect("recorded trace");
        let mut pattern = Vec::new();
        for (layer, pre) in self.spec.layers.iter().zip(&trace.pre) {
            if layer.activation() == Some(Activation::LeakyRelu) {
                if let Some(z) = pre {
                    pattern.extend(z.data().iter().map(|v| *v >= S::zero()));
                }
            }
        }
        Ok(pattern)
    }

    fn run(&self, input: &Tensor2D<S>, record: bool) -> Result<(Tensor2D<S>, Option<Trace<S>>)> {
        let slope = S::of(self.spec.leaky_slope);
        let n = self.spec.layers.len();
        let mut trace = record.then(|| Trace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
        });
        let mut cur = input.clone();
        for (layer, p) in self.spec.layers.iter().zip(&self.params) {
            let (z, act) = match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_width,
                    activation,
                } => {
                    let shape = ConvShape {
                        kernel_width,
                        in_channels,
                        out_channels,
                    };
                    (
                        layers::conv1d_forward(&cur, shape, &p.weight, &p.bias)?,
                        Some(activation),
                    )
                }
                LayerSpec::Dense {
                    inputs, activation, ..
                } => {
                    if cur.rows() != 1 || cur.cols() != inputs {
                        return Err(Error::dim(format!(
                            "dense expects a 1x{inputs} vector, got {}x{}",
                            cur.rows(),
                            cur.cols()
                        )));
                    }
                    let y = layers::dense_forward(cur.data(), &p.weight, &p.bias)?;
                    (Tensor2D::row_vector(y), Some(activation))
                }
                LayerSpec::GlobalAvgPool => {
                    (Tensor2D::row_vector(layers::global_avg_pool(&cur)?), None)
                }
                LayerSpec::Flatten => (cur.clone().flattened(), None),
            };
            let out = match act {
                Some(Activation::LeakyRelu) => layers::leaky_relu(&z, slope),
                _ => z.clone(),
            };
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(std::mem::replace(&mut cur, out));
                tr.pre.push(act.map(|_| z));
            } else {
                cur = out;
            }
        }
        if !cur.is_finite() {
            return Err(Error::State("non-finite activation in forward pass".into()));
        }
        Ok((cur, trace))
    }

    /// Back-propagates `output_grad` through the recorded trace, accumulating
    /// into the gradient slots of unfrozen layers. Stops at the frozen boundary.
    pub fn backward(&mut self, output_grad: &[S]) -> Result<()> {
        self.backward_impl(output_grad, false).map(|_| ())
    }

    /// Like [`backward`](Self::backward) but continues through every layer and
    /// returns the gradient with respect to the network input.
    pub fn backward_to_input(&mut self, output_grad: &[S]) -> Result<Tensor2D<S>> {
        Ok(self
            .backward_impl(output_grad, true)?
            .expect("input gradient requested"))
    }

    fn backward_impl(&mut self, output_grad: &[S], need_input: bool) -> Result<Option<Tensor2D<S>>> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let slope = S::of(self.spec.leaky_slope);
        let n = self.spec.layers.len();
        let frozen = self.spec.frozen_prefix;
        let stop = if need_input { 0 } else { frozen };
        let out_shape = self.spec.layers[n - 1].output_shape(trace.inputs[n - 1].shape())?;
        if output_grad.len() != out_shape.0 * out_shape.1 {
            return Err(Error::dim(format!(
                "output gradient has {} values, network output has {}",
                output_grad.len(),
                out_shape.0 * out_shape.1
            )));
        }
        let mut grad = Tensor2D::from_vec(out_shape.0, out_shape.1, output_grad.to_vec())?;
        for i in (stop..n).rev() {
            let layer = self.spec.layers[i];
            let input = &trace.inputs[i];
            let want_input = i > stop || need_input;
            let train = i >= frozen;
            if let (Some(Activation::LeakyRelu), Some(z)) = (layer.activation(), &trace.pre[i]) {
                for (g, &zv) in grad.data_mut().iter_mut().zip(z.data()) {
                    if zv < S::zero() {
                        *g = *g * slope;
                    }
                }
            }
            grad = match layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_width,
                    ..
                } => {
                    let shape = ConvShape {
                        kernel_width,
                        in_channels,
                        out_channels,
                    };
                    let mut scratch;
                    let g = if train {
                        &mut self.grads[i]
                    } else {
                        scratch = self.grads[i].zeros_like();
                        &mut scratch
                    };
                    let dx = layers::conv1d_backward(
                        input,
                        shape,
                        &self.params[i].weight,
                        &grad,
                        &mut g.weight,
                        &mut g.bias,
                        want_input,
                    )?;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerSpec::Dense { .. } => {
                    let mut scratch;
                    let g = if train {
                        &mut self.grads[i]
                    } else {
                        scratch = self.grads[i].zeros_like();
                        &mut scratch
                    };
                    let dx = layers::dense_backward(
                        input.data(),
                        &self.params[i].weight,
                        grad.data(),
                        &mut g.weight,
                        &mut g.bias,
                        want_input,
                    )?;
                    match dx {
                        Some(dx) => Tensor2D::row_vector(dx),
                        None => break,
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    layers::global_avg_pool_backward(grad.data(), input.rows())
                }
                LayerSpec::Flatten => {
                    Tensor2D::from_vec(input.rows(), input.cols(), grad.into_vec())?
                }
            };
            if i == stop {
                return Ok(need_input.then_some(grad));
            }
        }
        Ok(None)
    }

    pub(crate) fn parts_mut(&mut self) -> (&NetworkSpec, &mut [LayerParams<S>], &mut [LayerParams<S>], &mut AdamState<S>) {
        (&self.spec, &mut self.params, &mut self.grads, &mut self.opt)
    }
}

