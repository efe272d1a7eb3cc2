//! Multilayer perceptron with exact reverse-mode gradients.
//!
//! The final layer's output is split into named heads (e.g. `q_values`, or
//! `policy_logits` + `value`), all computed from the last hidden layer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamVector, Tensor};

/// Named head outputs of a forward pass.
pub type Outputs = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`. ReLU uses a
    /// subgradient of 0 at 0.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out x in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NnError> {
        let (out, _) = weights.expect_matrix("layer weights")?;
        if bias.shape() != [out] {
            return Err(NnError::ShapeMismatch(format!(
                "bias shape {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Layer dimensions, activations and heads; two nets with equal
/// architectures can exchange parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<(usize, Activation)>,
    pub heads: Vec<Head>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch.
    inputs: Vec<Tensor>,
    /// Activated output of each layer.
    outputs: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    heads: Vec<Head>,
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.heads == other.heads
    }
}

impl Mlp {
    /// Glorot-uniform initialized net: `input -> hidden... -> sum(head sizes)`.
    /// Hidden layers use `activation`, the output layer is linear.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        heads: &[(&str, usize)],
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_dim: usize = heads.iter().map(|(_, n)| n).sum();
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                activation
            };
            layers.push(Layer::new(
                Tensor::matrix(fan_out, fan_in, weights)?,
                Tensor::zeros(vec![fan_out]),
                act,
            )?);
        }
        Mlp::from_layers(
            layers,
            heads.iter().map(|(n, s)| (n.to_string(), *s)).collect(),
        )
    }

    /// Build from explicit layers. Head sizes must add up to the last
    /// layer's output width.
    pub fn from_layers(layers: Vec<Layer>, heads: Vec<(String, usize)>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ShapeMismatch("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if layers
            .iter()
            .any(|l| !l.weights.is_finite() || !l.bias.is_finite())
        {
            return Err(NnError::NonFinite("initial parameters".into()));
        }
        let out = layers.last().unwrap().out_dim();
        let mut start = 0;
        let mut hs = Vec::with_capacity(heads.len());
        for (name, len) in heads {
            if len == 0 || hs.iter().any(|h: &Head| h.name == name) {
                return Err(NnError::ShapeMismatch(format!("bad head {name:?}")));
            }
            hs.push(Head { name, start, len });
            start += len;
        }
        if start != out {
            return Err(NnError::ShapeMismatch(format!(
                "heads cover {start} outputs, final layer has {out}"
            )));
        }
        Ok(Mlp {
            layers,
            heads: hs,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head(&self, name: &str) -> Option<&Head> {
        self.heads.iter().find(|h| h.name == name)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| (l.out_dim(), l.activation))
                .collect(),
            heads: self.heads.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Forward pass without caching; safe to call on shared references.
    pub fn predict(&self, batch: &Tensor) -> Result<Outputs, NnError> {
        let (out, _) = self.run(batch, false)?;
        Ok(self.split_heads(&out))
    }

    /// Forward pass that caches activations for a following [`Mlp::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Outputs, NnError> {
        let (out, cache) = self.run(batch, true)?;
        self.cache = cache;
        Ok(self.split_heads(&out))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn run(&self, batch: &Tensor, keep: bool) -> Result<(Tensor, Option<ForwardCache>), NnError> {
        let (b, d) = batch.expect_matrix("batch")?;
        if d != self.input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "batch has {d} features, network expects {}",
                self.input_dim()
            )));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut x = batch.clone();
        for layer in &self.layers {
            let (out, inp) = (layer.out_dim(), layer.in_dim());
            let w = layer.weights.data();
            let bias = layer.bias.data();
            let mut y = vec![0.0; b * out];
            for (xr, yr) in x.data().chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
                for (o, yo) in yr.iter_mut().enumerate() {
                    let wr = &w[o * inp..(o + 1) * inp];
                    let z = bias[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    *yo = layer.activation.apply(z);
                }
            }
            let y = Tensor::matrix(b, out, y)?;
            if keep {
                inputs.push(x);
                outputs.push(y.clone());
            }
            x = y;
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite("forward output".into()));
        }
        let cache = keep.then_some(ForwardCache { inputs, outputs });
        Ok((x, cache))
    }

    fn split_heads(&self, out: &Tensor) -> Outputs {
        let b = out.rows();
        self.heads
            .iter()
            .map(|h| {
                let mut data = Vec::with_capacity(b * h.len);
                for r in 0..b {
                    data.extend_from_slice(&out.row(r)[h.start..h.start + h.len]);
                }
                (h.name.clone(), Tensor::matrix(b, h.len, data).unwrap())
            })
            .collect()
    }

    /// Gradient of `sum(outputs * output_grads)` with respect to every
    /// parameter, using the activations cached by the last
    /// [`Mlp::forward`]. Heads missing from `output_grads` contribute zero.
    pub fn backward(&self, output_grads: &Outputs) -> Result<ParamVector, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCachedForward)?;
        let last = self.layers.len() - 1;
        let b = cache.outputs[last].rows();
        let out_dim = self.layers[last].out_dim();
        let mut dy = vec![0.0; b * out_dim];
        for (name, g) in output_grads {
            let head = self
                .head(name)
                .ok_or_else(|| NnError::UnknownHead(name.clone()))?;
            if g.shape() != [b, head.len] {
                return Err(NnError::ShapeMismatch(format!(
                    "gradient for head {name} has shape {:?}, expected [{b}, {}]",
                    g.shape(),
                    head.len
                )));
            }
            for r in 0..b {
                dy[r * out_dim + head.start..r * out_dim + head.start + head.len]
                    .copy_from_slice(g.row(r));
            }
        }

        let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (out, inp) = (layer.out_dim(), layer.in_dim());
            let y = cache.outputs[l].data();
            let x = cache.inputs[l].data();
            // dz = dy * act'(y)
            let dz: Vec<f64> = dy
                .iter()
                .zip(y)
                .map(|(g, &yv)| g * layer.activation.derivative(yv))
                .collect();
            let mut dw = vec![0.0; out * inp];
            let mut db = vec![0.0; out];
            for r in 0..b {
                let xr = &x[r * inp..(r + 1) * inp];
                for o in 0..out {
                    let g = dz[r * out + o];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for (dwv, xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                        *dwv += g * xv;
                    }
                }
            }
            if l > 0 {
                let w = layer.weights.data();
                let mut dx = vec![0.0; b * inp];
                for r in 0..b {
                    let dxr = &mut dx[r * inp..(r + 1) * inp];
                    for o in 0..out {
                        let g = dz[r * out + o];
                        if g == 0.0 {
                            continue;
                        }
                        for (d, wv) in dxr.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                            *d += g * wv;
                        }
                    }
                }
                dy = dx;
            }
            per_layer.push((dw, db));
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in per_layer.into_iter().rev() {
            flat.extend(dw);
            flat.extend(db);
        }
        Ok(ParamVector::from(flat))
    }

    /// All weights then biases, layer by layer.
    pub fn flatten_params(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(l.weights.data());
            v.extend_from_slice(l.bias.data());
        }
        ParamVector::from(v)
    }

    pub fn unflatten_params(&mut self, params: &ParamVector) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::LengthMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if !params.is_finite() {
            return Err(NnError::NonFinite("parameter update".into()));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights
                .data_mut()
                .copy_from_slice(&params.values()[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias
                .data_mut()
                .copy_from_slice(&params.values()[offset..offset + nb]);
            offset += nb;
        }
        self.cache = None;
        Ok(())
    }
}
