//! Dense-network numerical core.
//!
//! Everything the rest of the crate calls "a model" lives here: flat parameter
//! vectors with a layer-shape descriptor, a fully connected network with
//! sigmoid hidden layers, backpropagation, plain SGD and the binary exchange
//! format used for every model payload.
//!
//! # Layout
//!
//! A [`ParamVector`] stores, for each layer in order, the weight matrix in
//! row-major `(output_dim, input_dim)` order followed by the `output_dim`
//! biases. The byte format mirrors that layout:
//!
//! ```text
//! "LSAI" | version: u16 | layer count: u16 | (in: u32, out: u32) * layers | f64 * values
//! ```
//!
//! All integers and reals are little-endian.

use rand::Rng;

use crate::error::{Error, Result};

/// Hidden widths of the default topology.
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Current version of the model byte format.
pub const FORMAT_VERSION: u16 = 1;

const MAGIC: &[u8; 4] = b"LSAI";

/// Dimensions of one fully connected layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LayerShape {
    pub fn new(input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid(format!("layer dimensions must be >= 1, got {input_dim}x{output_dim}")));
        }
        Ok(Self { input_dim, output_dim })
    }

    /// Number of scalars (weights and biases) in the layer.
    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Builds the chain `input -> hidden[0] -> ... -> output`.
pub fn topology(input: usize, hidden: &[usize], output: usize) -> Result<Vec<LayerShape>> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2).map(|w| LayerShape::new(w[0], w[1])).collect()
}

/// Size in bytes of the serialized header for `layers` layers.
pub fn header_len(layers: usize) -> usize {
    4 + 2 + 2 + 8 * layers
}

/// Size in bytes of a serialized parameter vector with the given shapes.
pub fn serialized_len(shapes: &[LayerShape]) -> usize {
    header_len(shapes.len()) + 8 * shapes.iter().map(LayerShape::param_count).sum::<usize>()
}

/// Flat vector of model weights plus its layer-shape descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(shapes: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shapes.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(Error::DimensionMismatch { context: "parameter vector", expected, actual: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {k} is not finite")));
        }
        Ok(Self { values, shapes })
    }

    pub fn zeros(shapes: Vec<LayerShape>) -> Self {
        let n = shapes.iter().map(LayerShape::param_count).sum();
        Self { values: vec![0.0; n], shapes }
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat offset of layer `l`'s first weight.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.shapes[..l].iter().map(LayerShape::param_count).sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        let s = self.shapes[l];
        &self.values[off..off + s.input_dim * s.output_dim]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        let s = self.shapes[l];
        let start = off + s.input_dim * s.output_dim;
        &self.values[start..start + s.output_dim]
    }

    /// `true` at every flat index that holds a bias.
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.values.len());
        for s in &self.shapes {
            mask.extend(std::iter::repeat_n(false, s.input_dim * s.output_dim));
            mask.extend(std::iter::repeat_n(true, s.output_dim));
        }
        mask
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes
    }

    pub(crate) fn ensure_same_shape(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(context))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_same_shape(other, "parameter difference")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParamVector { values, shapes: self.shapes.clone() })
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_shape(other, "dot product")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Serializes to the little-endian exchange format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(serialized_len(&self.shapes));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shapes.len() as u16).to_le_bytes());
        for s in &self.shapes {
            out.extend_from_slice(&(s.input_dim as u32).to_le_bytes());
            out.extend_from_slice(&(s.output_dim as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the exchange format. Never returns a partial model.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Decode(format!("unsupported version {version}")));
        }
        let layers = u16::from_le_bytes(cur.array()?) as usize;
        let mut shapes = Vec::with_capacity(layers);
        for l in 0..layers {
            let i = u32::from_le_bytes(cur.array()?) as usize;
            let o = u32::from_le_bytes(cur.array()?) as usize;
            shapes.push(LayerShape::new(i, o).map_err(|_| Error::Decode(format!("layer {l} has a zero dimension")))?);
        }
        let n: usize = shapes.iter().map(LayerShape::param_count).sum();
        let remaining = bytes.len() - cur.pos;
        if remaining != 8 * n {
            return Err(Error::Decode(format!("expected {} value bytes, found {remaining}", 8 * n)));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(cur.array()?));
        }
        ParamVector::new(shapes, values).map_err(|e| Error::Decode(e.to_string()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Decode(format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}

/// Activation of the final layer. Hidden layers are always sigmoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// `0.5 * sum((y - t)^2)`
    Mse,
}

impl Loss {
    pub fn value(&self, output: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => 0.5 * output.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>(),
        }
    }

    pub fn gradient(&self, output: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            Loss::Mse => output.iter().zip(target).map(|(y, t)| y - t).collect(),
        }
    }
}

/// Layer activations recorded by a forward pass. `activations[0]` is the
/// input and `activations[l + 1]` is the output of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds at least the input")
    }
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Backward {
    pub grad: ParamVector,
    /// Gradient with respect to the network input.
    pub d_input: Vec<f64>,
    /// `deltas[l]` is the gradient with respect to layer `l`'s pre-activation.
    pub deltas: Vec<Vec<f64>>,
}

/// Fully connected network: sigmoid hidden layers and a configurable output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    params: ParamVector,
    output: OutputActivation,
}

impl MlpModel {
    pub fn new(params: ParamVector, output: OutputActivation) -> Result<Self> {
        if params.shapes().is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for (l, w) in params.shapes().windows(2).enumerate() {
            if w[0].output_dim != w[1].input_dim {
                return Err(Error::invalid(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    w[0].output_dim,
                    l + 1,
                    w[1].input_dim
                )));
            }
        }
        Ok(Self { params, output })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(
        shapes: Vec<LayerShape>,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParamVector::zeros(shapes.clone());
        let mut off = 0;
        for s in &shapes {
            let bound = 1.0 / (s.input_dim as f64).sqrt();
            for v in &mut params.values_mut()[off..off + s.input_dim * s.output_dim] {
                *v = rng.gen_range(-bound..=bound);
            }
            off += s.param_count();
        }
        Self::new(params, output)
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Replaces the parameters; the shapes must not change.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.ensure_same_shape(&params, "set_params")?;
        self.params = params;
        Ok(())
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn shapes(&self) -> &[LayerShape] {
        self.params.shapes()
    }

    pub fn num_layers(&self) -> usize {
        self.params.shapes().len()
    }

    pub fn input_dim(&self) -> usize {
        self.params.shapes()[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.params.shapes()[self.num_layers() - 1].output_dim
    }

    fn activates_sigmoid(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers() || self.output == OutputActivation::Sigmoid
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.activations.pop().expect("non-empty trace"))
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        self.trace_injected(input, None)
    }

    /// Forward pass that adds `injection` to the pre-activation of hidden
    /// layer `r` (1-based, i.e. the output of weight layer `r - 1`).
    pub fn trace_injected(&self, input: &[f64], injection: Option<(usize, &[f64])>) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if let Some((r, inj)) = injection {
            if r == 0 || r >= self.num_layers() {
                return Err(Error::invalid(format!("no hidden layer {r} to inject into")));
            }
            let width = self.shapes()[r - 1].output_dim;
            if inj.len() != width {
                return Err(Error::DimensionMismatch {
                    context: "hidden injection",
                    expected: width,
                    actual: inj.len(),
                });
            }
        }
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(input.to_vec());
        for l in 0..self.num_layers() {
            let s = self.shapes()[l];
            let w = self.params.weights(l);
            let b = self.params.bias(l);
            let x = &activations[l];
            let mut z: Vec<f64> = (0..s.output_dim)
                .map(|o| {
                    let row = &w[o * s.input_dim..(o + 1) * s.input_dim];
                    b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect();
            if let Some((r, inj)) = injection {
                if l + 1 == r {
                    for (zi, ji) in z.iter_mut().zip(inj) {
                        *zi += ji;
                    }
                }
            }
            if self.activates_sigmoid(l) {
                for zi in &mut z {
                    *zi = sigmoid(*zi);
                }
            }
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `d_output` (gradient of the loss w.r.t. the network
    /// output) through a recorded trace.
    pub fn backward(&self, trace: &Trace, d_output: &[f64]) -> Result<Backward> {
        let mut grad = ParamVector::zeros(self.shapes().to_vec());
        let (d_input, deltas) = self.backward_accumulate(trace, d_output, grad.values_mut(), true)?;
        Ok(Backward { grad, d_input, deltas })
    }

    /// Adds this sample's parameter gradient into `acc` and returns the input
    /// gradient (and, when requested, the per-layer pre-activation deltas).
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        d_output: &[f64],
        acc: &mut [f64],
        keep_deltas: bool,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let layers = self.num_layers();
        if trace.activations.len() != layers + 1 {
            return Err(Error::invalid("trace does not match the model depth"));
        }
        if d_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: self.output_dim(),
                actual: d_output.len(),
            });
        }
        if acc.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient accumulator",
                expected: self.params.len(),
                actual: acc.len(),
            });
        }
        let mut deltas = vec![Vec::new(); if keep_deltas { layers } else { 0 }];
        let mut delta: Vec<f64> = d_output.to_vec();
        if self.activates_sigmoid(layers - 1) {
            for (d, a) in delta.iter_mut().zip(&trace.activations[layers]) {
                *d *= a * (1.0 - a);
            }
        }
        let mut d_input = Vec::new();
        for l in (0..layers).rev() {
            let s = self.shapes()[l];
            let off = self.params.layer_offset(l);
            let x = &trace.activations[l];
            {
                let (gw, gb) = acc[off..off + s.param_count()].split_at_mut(s.input_dim * s.output_dim);
                for o in 0..s.output_dim {
                    let d = delta[o];
                    let row = &mut gw[o * s.input_dim..(o + 1) * s.input_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    gb[o] += d;
                }
            }
            let w = self.params.weights(l);
            let mut prev = vec![0.0; s.input_dim];
            for o in 0..s.output_dim {
                let d = delta[o];
                let row = &w[o * s.input_dim..(o + 1) * s.input_dim];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * d;
                }
            }
            let current = std::mem::take(&mut delta);
            if keep_deltas {
                deltas[l] = current;
            }
            if l > 0 {
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= a * (1.0 - a);
                }
                delta = prev;
            } else {
                d_input = prev;
            }
        }
        Ok((d_input, deltas))
    }

    /// Gradient of `loss(forward(input), target)` with respect to the parameters.
    pub fn backprop(&self, input: &[f64], target: &[f64], loss: Loss) -> Result<ParamVector> {
        if target.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "backprop target",
                expected: self.output_dim(),
                actual: target.len(),
            });
        }
        let trace = self.trace(input)?;
        for (l, a) in trace.activations.iter().enumerate().skip(1) {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l - 1 });
            }
        }
        if !loss.value(trace.output(), target).is_finite() {
            return Err(Error::NonFinite { layer: self.num_layers() - 1 });
        }
        let d_out = loss.gradient(trace.output(), target);
        Ok(self.backward(&trace, &d_out)?.grad)
    }
}

/// Learning rate and minibatch size for plain SGD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, batch_size: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {learning_rate}")));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(Self { learning_rate, batch_size })
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 128 }
    }
}

/// `params - learning_rate * grad`, element-wise.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, cfg: &SgdConfig) -> Result<ParamVector> {
    params.ensure_same_shape(grad, "sgd_step")?;
    let values = params.values().iter().zip(grad.values()).map(|(p, g)| p - cfg.learning_rate * g).collect();
    ParamVector::new(params.shapes().to_vec(), values)
}
