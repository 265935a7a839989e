//! Feedforward classifier `softmax ∘ readout ∘ Φ`.
//!
//! `Φ` is an ordered stack of dense, periodic-conv, and activation layers;
//! the readout is a single dense layer. All passes are batched over the rows
//! of a [`Matrix`]; the single-sample entry points wrap a batch of one.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{gemm, Matrix, Rng};
use crate::spectral::{conv2d_kernel_grad, conv2d_periodic_adjoint, conv_forward_raw, ConvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
    Identity,
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // exact (erf) form
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// ReLU'(0) is taken as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * libm::exp(-0.5 * x * x);
                cdf + x * pdf
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// `sup |φ'|`. GELU peaks at `x = √2`, slightly above 1.
    pub fn max_derivative(self) -> f64 {
        match self {
            Activation::Gelu => Activation::Gelu.derivative(core::f64::consts::SQRT_2),
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(invalid!("unknown activation '{}'", other)),
        }
    }
}

/// `y = W x + b`, `W` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.rows {
                return Err(invalid!("bias length {} does not match {} outputs", b.len(), weight.rows));
            }
        }
        Ok(Self { weight, bias })
    }
}

/// Periodic convolution with an optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `(c_out, c_in, k, k)` row-major.
    pub kernel: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub spec: ConvSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    Activation { activation: Activation },
}

impl Layer {
    pub fn in_dim(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.weight.cols),
            Layer::Conv(c) => Some(c.spec.input_len()),
            Layer::Activation { .. } => None,
        }
    }

    pub fn out_dim(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.weight.rows),
            Layer::Conv(c) => Some(c.spec.output_len()),
            Layer::Activation { .. } => None,
        }
    }

    pub fn has_weights(&self) -> bool {
        !matches!(self, Layer::Activation { .. })
    }
}

/// Which weight-bearing layer a parameter or spectral entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerRef {
    Feature(usize),
    Readout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub input_dim: usize,
    pub features: Vec<Layer>,
    pub readout: DenseLayer,
}

/// Per-layer inputs recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `inputs[l]` is what feature layer `l` received.
    pub inputs: Vec<Matrix>,
    /// `Φ(x)` rows, the readout input.
    pub features: Matrix,
    pub logits: Matrix,
}

/// Gradient buffers laid out like [`Net::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(net: &Net) -> Self {
        Gradients(net.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            crate::numerics::axpy(alpha, b, a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Weights and biases i.i.d. `N(0, std²)`.
    Gaussian { std: f64 },
    /// Weights `N(0, 1/fan_in)`, zero biases.
    FanIn,
    /// Weights and biases i.i.d. uniform on `±1/√fan_in`.
    UniformFanIn,
}

impl Net {
    pub fn new(input_dim: usize, features: Vec<Layer>, readout: DenseLayer) -> Result<Self> {
        let mut dim = input_dim;
        for (idx, layer) in features.iter().enumerate() {
            if let Some(ind) = layer.in_dim() {
                if ind != dim {
                    return Err(invalid!("layer {} expects input {}, previous layer gives {}", idx, ind, dim));
                }
            }
            if let Layer::Conv(c) = layer {
                c.spec.validate()?;
                if c.kernel.len() != c.spec.kernel_len() {
                    return Err(invalid!("layer {} kernel length mismatch", idx));
                }
                if let Some(b) = &c.bias {
                    if b.len() != c.spec.c_out {
                        return Err(invalid!("layer {} bias length mismatch", idx));
                    }
                }
            }
            if let Layer::Dense(d) = layer {
                DenseLayer::new(d.weight.clone(), d.bias.clone())?;
            }
            dim = layer.out_dim().unwrap_or(dim);
        }
        if readout.weight.cols != dim {
            return Err(invalid!("readout expects {} features, feature map gives {}", readout.weight.cols, dim));
        }
        DenseLayer::new(readout.weight.clone(), readout.bias.clone())?;
        Ok(Self { input_dim, features, readout })
    }

    /// `input → [dense + act]* → readout`, e.g. `sizes = [2, 8, 2]`.
    pub fn mlp(sizes: &[usize], activation: Activation, init: Init, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid!("mlp needs at least input and output sizes"));
        }
        let mut features = Vec::new();
        for w in sizes.windows(2).take(sizes.len() - 2) {
            features.push(Layer::Dense(init_dense(w[0], w[1], init, rng)));
            features.push(Layer::Activation { activation });
        }
        let n = sizes.len();
        let readout = init_dense(sizes[n - 2], sizes[n - 1], init, rng);
        Net::new(sizes[0], features, readout)
    }

    pub fn feature_dim(&self) -> usize {
        self.readout.weight.cols
    }

    pub fn classes(&self) -> usize {
        self.readout.weight.rows
    }

    /// Largest `|φ'|` over the feature map's activations (1 when there are none).
    pub fn max_activation_derivative(&self) -> f64 {
        self.features
            .iter()
            .filter_map(|l| match l {
                Layer::Activation { activation } => Some(activation.max_derivative()),
                _ => None,
            })
            .fold(1.0, f64::max)
    }

    pub fn activation_count(&self) -> usize {
        self.features.iter().filter(|l| matches!(l, Layer::Activation { .. })).count()
    }

    /// Weight-bearing layers in order, readout last.
    pub fn weight_layers(&self) -> Vec<LayerRef> {
        let mut refs: Vec<LayerRef> = self
            .features
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_weights())
            .map(|(i, _)| LayerRef::Feature(i))
            .collect();
        refs.push(LayerRef::Readout);
        refs
    }

    /// Parameter tensors: per weight layer its weight, then its bias if present.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.features {
            match layer {
                Layer::Dense(d) => {
                    out.push(&d.weight.data);
                    if let Some(b) = &d.bias {
                        out.push(b);
                    }
                }
                Layer::Conv(c) => {
                    out.push(&c.kernel);
                    if let Some(b) = &c.bias {
                        out.push(b);
                    }
                }
                Layer::Activation { .. } => {}
            }
        }
        out.push(&self.readout.weight.data);
        if let Some(b) = &self.readout.bias {
            out.push(b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.features {
            match layer {
                Layer::Dense(d) => {
                    out.push(&mut d.weight.data);
                    if let Some(b) = &mut d.bias {
                        out.push(b);
                    }
                }
                Layer::Conv(c) => {
                    out.push(&mut c.kernel);
                    if let Some(b) = &mut c.bias {
                        out.push(b);
                    }
                }
                Layer::Activation { .. } => {}
            }
        }
        out.push(&mut self.readout.weight.data);
        if let Some(b) = &mut self.readout.bias {
            out.push(b);
        }
        out
    }

    /// Index into [`Net::params`] of the weight tensor of `layer`.
    pub fn weight_slot(&self, layer: LayerRef) -> Option<usize> {
        let mut slot = 0;
        for (i, l) in self.features.iter().enumerate() {
            let bias = match l {
                Layer::Dense(d) => d.bias.is_some(),
                Layer::Conv(c) => c.bias.is_some(),
                Layer::Activation { .. } => continue,
            };
            if layer == LayerRef::Feature(i) {
                return Some(slot);
            }
            slot += 1 + usize::from(bias);
        }
        match layer {
            LayerRef::Readout => Some(slot),
            LayerRef::Feature(_) => None,
        }
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols != self.input_dim {
            return Err(invalid!("input has {} columns, net expects {}", x.cols, self.input_dim));
        }
        let mut inputs = Vec::with_capacity(self.features.len());
        let mut cur = x.clone();
        for layer in &self.features {
            let next = layer_forward(layer, &cur);
            inputs.push(cur);
            cur = next;
        }
        let logits = dense_forward(&self.readout, &cur);
        Ok(ForwardCache { inputs, features: cur, logits })
    }

    /// Logits and cache for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        Ok((cache.logits.data.clone(), cache))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// `Φ(x)`
    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1.features.data)
    }

    pub fn features_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.input_dim {
            return Err(invalid!("input has {} columns, net expects {}", x.cols, self.input_dim));
        }
        let mut cur = x.clone();
        for layer in &self.features {
            cur = layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    pub fn logits_batch(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.features_batch(x)?;
        Ok(dense_forward(&self.readout, &f))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits_batch(x)?;
        Ok((0..logits.rows).map(|r| argmax(logits.row(r))).collect())
    }

    /// Reverse-mode gradients of `Σ_rows ⟨dlogits, logits⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        Ok(self.backward_full(cache, dlogits)?.0)
    }

    /// As [`Net::backward`], also returning the gradient with respect to the input rows.
    pub fn backward_full(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<(Gradients, Matrix)> {
        if cache.inputs.len() != self.features.len()
            || cache.logits.rows != dlogits.rows
            || dlogits.cols != self.classes()
            || cache.features.cols != self.feature_dim()
        {
            return Err(invalid!("forward cache does not match this net or gradient shape"));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.features.len() + 1);
        let (readout_grads, mut delta) = dense_backward(&self.readout, &cache.features, dlogits);
        for (layer, input) in self.features.iter().zip(&cache.inputs).rev() {
            let (grads, next) = layer_backward(layer, input, &delta);
            per_layer.push(grads);
            delta = next;
        }
        per_layer.reverse();
        per_layer.push(readout_grads);
        Ok((Gradients(per_layer.into_iter().flatten().collect()), delta))
    }

    /// `∇Φ(x)`, a `d × n` matrix, by forward-mode propagation of the identity.
    /// Conv layers are applied column-wise in operator form.
    pub fn input_jacobian_feature(&self, x: &[f64]) -> Result<Matrix> {
        let (_, cache) = self.forward(x)?;
        let n = self.input_dim;
        // jt holds ∇(layer output)ᵀ: n rows, one per input coordinate.
        let mut jt = Matrix::identity(n);
        for (layer, input) in self.features.iter().zip(&cache.inputs) {
            jt = match layer {
                Layer::Dense(d) => gemm(&jt, false, &d.weight, true),
                Layer::Conv(c) => {
                    let mut out = Matrix::zeros(n, c.spec.output_len());
                    for r in 0..n {
                        let y = conv_forward_raw(jt.row(r), &c.kernel, &c.spec);
                        out.row_mut(r).copy_from_slice(&y);
                    }
                    out
                }
                Layer::Activation { activation } => {
                    let d: Vec<f64> = input.data.iter().map(|&z| activation.derivative(z)).collect();
                    let mut out = jt;
                    for r in 0..n {
                        for (v, s) in out.row_mut(r).iter_mut().zip(&d) {
                            *v *= s;
                        }
                    }
                    out
                }
            };
        }
        Ok(jt.transpose())
    }
}

fn init_dense(fan_in: usize, fan_out: usize, init: Init, rng: &mut Rng) -> DenseLayer {
    let (w, b) = match init {
        Init::Gaussian { std } => {
            let w = rng.normal_vec(fan_in * fan_out, 0.0, std);
            let b = rng.normal_vec(fan_out, 0.0, std);
            (w, b)
        }
        Init::FanIn => {
            let std = 1.0 / libm::sqrt(fan_in as f64);
            (rng.normal_vec(fan_in * fan_out, 0.0, std), vec![0.0; fan_out])
        }
        Init::UniformFanIn => {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let mut draw = |n: usize| (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect::<Vec<f64>>();
            let w = draw(fan_in * fan_out);
            (w, draw(fan_out))
        }
    };
    DenseLayer { weight: Matrix { rows: fan_out, cols: fan_in, data: w }, bias: Some(b) }
}

/// Periodic conv layer with the given init.
pub fn init_conv(spec: ConvSpec, init: Init, rng: &mut Rng) -> Result<ConvLayer> {
    spec.validate()?;
    let (kernel, bias) = match init {
        Init::Gaussian { std } => (rng.normal_vec(spec.kernel_len(), 0.0, std), rng.normal_vec(spec.c_out, 0.0, std)),
        Init::FanIn => {
            let std = 1.0 / libm::sqrt((spec.c_in * spec.k * spec.k) as f64);
            (rng.normal_vec(spec.kernel_len(), 0.0, std), vec![0.0; spec.c_out])
        }
        Init::UniformFanIn => {
            let bound = 1.0 / libm::sqrt((spec.c_in * spec.k * spec.k) as f64);
            let mut draw = |n: usize| (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect::<Vec<f64>>();
            let k = draw(spec.kernel_len());
            (k, draw(spec.c_out))
        }
    };
    Ok(ConvLayer { kernel, bias: Some(bias), spec })
}

fn dense_forward(layer: &DenseLayer, x: &Matrix) -> Matrix {
    let mut y = gemm(x, false, &layer.weight, true);
    if let Some(b) = &layer.bias {
        for r in 0..y.rows {
            for (v, bi) in y.row_mut(r).iter_mut().zip(b) {
                *v += bi;
            }
        }
    }
    y
}

fn dense_backward(layer: &DenseLayer, x: &Matrix, dy: &Matrix) -> (Vec<Vec<f64>>, Matrix) {
    let dw = gemm(dy, true, x, false);
    let dx = gemm(dy, false, &layer.weight, false);
    let mut grads = vec![dw.data];
    if layer.bias.is_some() {
        let mut db = vec![0.0; dy.cols];
        for r in 0..dy.rows {
            for (acc, v) in db.iter_mut().zip(dy.row(r)) {
                *acc += v;
            }
        }
        grads.push(db);
    }
    (grads, dx)
}

fn layer_forward(layer: &Layer, x: &Matrix) -> Matrix {
    match layer {
        Layer::Dense(d) => dense_forward(d, x),
        Layer::Conv(c) => {
            let plane = c.spec.out_h() * c.spec.out_w();
            let mut y = Matrix::zeros(x.rows, c.spec.output_len());
            for r in 0..x.rows {
                let out = conv_forward_raw(x.row(r), &c.kernel, &c.spec);
                let row = y.row_mut(r);
                row.copy_from_slice(&out);
                if let Some(b) = &c.bias {
                    for (o, bo) in b.iter().enumerate() {
                        row[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bo);
                    }
                }
            }
            y
        }
        Layer::Activation { activation } => Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&z| activation.apply(z)).collect(),
        },
    }
}

fn layer_backward(layer: &Layer, x: &Matrix, dy: &Matrix) -> (Vec<Vec<f64>>, Matrix) {
    match layer {
        Layer::Dense(d) => dense_backward(d, x, dy),
        Layer::Conv(c) => {
            let plane = c.spec.out_h() * c.spec.out_w();
            let mut dk = vec![0.0; c.kernel.len()];
            let mut db = vec![0.0; c.spec.c_out];
            let mut dx = Matrix::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let g = conv2d_kernel_grad(x.row(r), dy.row(r), &c.spec);
                crate::numerics::axpy(1.0, &g, &mut dk);
                let back = conv2d_periodic_adjoint(dy.row(r), &c.kernel, &c.spec);
                dx.row_mut(r).copy_from_slice(&back);
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc += dy.row(r)[o * plane..(o + 1) * plane].iter().sum::<f64>();
                }
            }
            let mut grads = vec![dk];
            if c.bias.is_some() {
                grads.push(db);
            }
            (grads, dx)
        }
        Layer::Activation { activation } => {
            let data = x.data.iter().zip(&dy.data).map(|(&z, &g)| g * activation.derivative(z)).collect();
            (Vec::new(), Matrix { rows: x.rows, cols: x.cols, data })
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Highest-scoring class other than `exclude`.
pub fn runner_up(values: &[f64], exclude: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if i == exclude {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Mean cross-entropy over rows, its gradient with respect to the logits
/// (already divided by the row count), and the number of correct argmax predictions.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix, usize)> {
    if labels.len() != logits.rows {
        return Err(invalid!("{} labels for {} rows", labels.len(), logits.rows));
    }
    let m = logits.rows as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        if y >= row.len() {
            return Err(invalid!("label {} out of range for {} classes", y, row.len()));
        }
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - mx)).sum();
        let lse = mx + libm::log(sum);
        loss += lse - row[y];
        if argmax(row) == y {
            correct += 1;
        }
        let g = grad.row_mut(r);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = libm::exp(row[j] - lse) / m;
        }
        g[y] -= 1.0 / m;
    }
    Ok((loss / m, grad, correct))
}

pub fn describe(net: &Net) -> String {
    let mut parts: Vec<String> = Vec::new();
    for l in &net.features {
        parts.push(match l {
            Layer::Dense(d) => alloc::format!("dense({}→{})", d.weight.cols, d.weight.rows),
            Layer::Conv(c) => alloc::format!(
                "conv({}→{}, k={}, s={}, {}x{})",
                c.spec.c_in,
                c.spec.c_out,
                c.spec.k,
                c.spec.stride,
                c.spec.h,
                c.spec.w
            ),
            Layer::Activation { activation } => String::from(activation.name()),
        });
    }
    parts.push(alloc::format!("readout({}→{})", net.feature_dim(), net.classes()));
    parts.join(" | ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn central_diff(f: &mut dyn FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
        (f(x0 + h) - f(x0 - h)) / (2.0 * h)
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut rng = Rng::new(0);
        let mut net = Net::mlp(&[3, 4, 2], Activation::Gelu, Init::FanIn, &mut rng).unwrap();
        for p in net.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(net.logits(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_readout() {
        let net = Net::new(2, vec![], DenseLayer::new(Matrix::identity(2), None).unwrap()).unwrap();
        assert_eq!(net.logits(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(net.feature_map(&[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
    }

    #[test]
    fn predict_ties_to_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(runner_up(&[0.5, 0.2, 0.5], 0), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = Rng::new(0);
        let net = Net::mlp(&[3, 4, 2], Activation::Relu, Init::FanIn, &mut rng).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        let bad = Net::new(3, vec![], DenseLayer::new(Matrix::zeros(2, 4), None).unwrap());
        assert!(bad.is_err());
    }

    #[test]
    fn gelu_max_derivative_matches_scan() {
        let d = Activation::Gelu.max_derivative();
        let scan = (0..400_000).map(|i| Activation::Gelu.derivative(-10.0 + i as f64 * 5e-5)).fold(0.0, f64::max);
        assert!((d - scan).abs() < 1e-8);
        assert!((d - 1.128_904_1).abs() < 1e-6);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Gelu, Activation::Tanh, Activation::Identity, Activation::Relu] {
            for &x in &[-2.3, -0.4, 0.7, 1.9] {
                let fd = central_diff(&mut |t| act.apply(t), x, 1e-6);
                assert!((fd - act.derivative(x)).abs() < 1e-7, "{:?} at {}", act, x);
            }
        }
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let mut rng = Rng::new(4);
        let net = Net::mlp(&[3, 5, 4], Activation::Tanh, Init::FanIn, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.2, -0.1, 0.4]).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(1, 4)).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient() {
        // single dense layer, loss ½‖Wx + b − t‖² ⇒ dW = (Wx + b − t) xᵀ
        let mut rng = Rng::new(6);
        let net = Net::mlp(&[3, 2], Activation::Identity, Init::FanIn, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let t = [1.0, -1.0];
        let (logits, cache) = net.forward(&x).unwrap();
        let r: Vec<f64> = logits.iter().zip(&t).map(|(a, b)| a - b).collect();
        let g = net.backward(&cache, &Matrix::from_vec(1, 2, r.clone()).unwrap()).unwrap();
        let expected = Matrix::outer(1.0, &r, &x);
        for (a, b) in g.0[0].iter().zip(&expected.data) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(g.0[1], r);
    }

    #[test]
    fn weight_slots_follow_param_layout() {
        let mut rng = Rng::new(1);
        let net = Net::mlp(&[2, 3, 4, 2], Activation::Gelu, Init::FanIn, &mut rng).unwrap();
        assert_eq!(net.weight_layers(), vec![LayerRef::Feature(0), LayerRef::Feature(2), LayerRef::Readout]);
        assert_eq!(net.weight_slot(LayerRef::Feature(0)), Some(0));
        assert_eq!(net.weight_slot(LayerRef::Feature(2)), Some(2));
        assert_eq!(net.weight_slot(LayerRef::Readout), Some(4));
        assert_eq!(net.weight_slot(LayerRef::Feature(1)), None);
        assert_eq!(net.params()[4].len(), 8);
    }

    #[test]
    fn relu_jacobian_is_scale_invariant() {
        let mut rng = Rng::new(12);
        let net = Net::mlp(&[3, 6, 6, 2], Activation::Relu, Init::FanIn, &mut rng).unwrap();
        // zero biases (FanIn) make the activation pattern scale invariant
        let x = [0.3, -0.7, 1.1];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(net.input_jacobian_feature(&x).unwrap(), net.input_jacobian_feature(&x2).unwrap());
    }

    #[test]
    fn linear_feature_jacobian_is_weight() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]]).unwrap();
        let net = Net::new(
            2,
            vec![Layer::Dense(DenseLayer::new(w.clone(), Some(vec![0.1, 0.2, 0.3])).unwrap())],
            DenseLayer::new(Matrix::zeros(2, 3), None).unwrap(),
        )
        .unwrap();
        assert_eq!(net.input_jacobian_feature(&[0.4, -0.2]).unwrap(), w);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let logits = Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]]).unwrap();
        let (loss, g, correct) = cross_entropy(&logits, &[1, 0]).unwrap();
        assert!(loss > 0.0);
        assert_eq!(correct, 1);
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
