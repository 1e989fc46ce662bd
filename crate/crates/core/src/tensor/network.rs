//! Sequential networks, their parameters, and a model wrapper that records the
//! activations needed for backpropagation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::ops::{
    check_dropout_rate, col2im, conv_forward_sample, deconv_forward_sample, dropout_mask, gemm,
    im2col, sigmoid, ConvGeometry, Mode,
};
use super::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the zero-mean normal used for weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

/// A validated chain of layers with every intermediate shape resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec", into = "NetworkSpec")]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
}

impl TryFrom<NetworkSpec> for Network {
    type Error = Error;
    fn try_from(spec: NetworkSpec) -> Result<Self> {
        Network::new(&spec.input_shape, spec.layers)
    }
}

impl From<Network> for NetworkSpec {
    fn from(net: Network) -> Self {
        NetworkSpec {
            input_shape: net.shapes[0].clone(),
            layers: net.layers,
        }
    }
}

impl Network {
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self { layers, shapes })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Input shape of layer `i` (or the network output for `i == len`).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_name(&self, i: usize) -> String {
        format!("{i:02}_{}", self.layers[i].kind_name())
    }

    /// The first `n` layers as a network of their own. Layer names are preserved.
    pub fn prefix(&self, n: usize) -> Network {
        Network {
            layers: self.layers[..n].to_vec(),
            shapes: self.shapes[..=n].to_vec(),
        }
    }

    fn trainable(&self) -> impl Iterator<Item = (usize, String, Vec<usize>, Vec<usize>)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| {
            l.param_shapes(&self.shapes[i])
                .map(|(w, b)| (i, self.layer_name(i), w, b))
        })
    }

    /// Weights from N(0, 0.02) in layer order, biases zero.
    pub fn init_params(&self, seed: u64) -> Parameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut layers = BTreeMap::new();
        for (_, name, w_shape, b_shape) in self.trainable() {
            let n: usize = w_shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            layers.insert(
                name,
                LayerParams {
                    weight: Tensor::new(w_shape, data).expect("shape from spec"),
                    bias: Tensor::zeros(&b_shape),
                },
            );
        }
        Parameters { seed, layers }
    }

    /// Checks that `params` has exactly one correctly shaped entry per trainable layer.
    pub fn check_params(&self, params: &Parameters) -> Result<()> {
        let mut expected = 0;
        for (_, name, w, b) in self.trainable() {
            expected += 1;
            let entry = params
                .layers
                .get(&name)
                .ok_or_else(|| Error::Config(format!("missing parameters for layer {name}")))?;
            if entry.weight.shape() != w.as_slice() {
                return Err(Error::dim(format!("{name} weight"), entry.weight.shape(), &w));
            }
            if entry.bias.shape() != b.as_slice() {
                return Err(Error::dim(format!("{name} bias"), entry.bias.shape(), &b));
            }
        }
        if params.layers.len() != expected {
            return Err(Error::Config(format!(
                "parameter set has {} entries, network has {expected} trainable layers",
                params.layers.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.trainable()
            .map(|(_, _, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Named weights and biases of a network, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub seed: u64,
    layers: BTreeMap<String, LayerParams>,
}

impl Parameters {
    pub fn new(seed: u64, layers: BTreeMap<String, LayerParams>) -> Self {
        Self { seed, layers }
    }

    pub fn get(&self, name: &str) -> Option<&LayerParams> {
        self.layers.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut LayerParams> {
        self.layers.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams)> {
        self.layers.iter()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Every tensor as `("<layer>.weight" | "<layer>.bias", tensor)`, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|(name, p)| {
                [
                    (format!("{name}.weight"), &p.weight),
                    (format!("{name}.bias"), &p.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|(name, p)| {
                [
                    (format!("{name}.weight"), &mut p.weight),
                    (format!("{name}.bias"), &mut p.bias),
                ]
            })
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.clear_grad();
        }
    }

    /// Keeps only the named layers.
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Parameters {
        let layers = names
            .into_iter()
            .filter_map(|n| self.layers.get(n).map(|p| (n.to_string(), p.clone())))
            .collect();
        Parameters {
            seed: self.seed,
            layers,
        }
    }

    /// Equality of every stored value down to the bit pattern (gradients ignored).
    pub fn bitwise_eq(&self, other: &Parameters) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[derive(Debug)]
struct Tape {
    batch: usize,
    /// Input to every layer followed by the network output.
    activations: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

/// A network with its parameters. `forward` records a tape that the next
/// `backward` consumes.
#[derive(Debug)]
pub struct Model {
    network: Network,
    params: Parameters,
    frozen: bool,
    tape: Option<Tape>,
}

impl Model {
    pub fn new(network: Network, params: Parameters) -> Result<Self> {
        network.check_params(&params)?;
        Ok(Self {
            network,
            params,
            frozen: false,
            tape: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    /// Frozen models still propagate input gradients but never accumulate
    /// parameter gradients.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.params.clear_grads();
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn batch_of(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != self.network.input_shape().len() + 1 || &s[1..] != self.network.input_shape()
        {
            let mut want = vec![0];
            want.extend_from_slice(self.network.input_shape());
            return Err(Error::dim("network input [batch, ...]", s, &want));
        }
        Ok(s[0])
    }

    fn output_tensor(&self, batch: usize, data: Vec<f64>) -> Tensor {
        let mut shape = vec![batch];
        shape.extend_from_slice(self.network.output_shape());
        Tensor::new(shape, data).expect("shape tracked by network")
    }

    /// Batched forward pass. `x` is `[batch, ...input_shape]`.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let batch = self.batch_of(x)?;
        let mut activations = Vec::with_capacity(self.network.len() + 1);
        let mut masks = Vec::with_capacity(self.network.len());
        activations.push(x.data().to_vec());
        for i in 0..self.network.len() {
            let (y, mask) =
                self.layer_forward(i, activations.last().unwrap(), batch, mode, Some(rng))?;
            activations.push(y);
            masks.push(mask);
        }
        let out = self.output_tensor(batch, activations.last().unwrap().clone());
        self.tape = Some(Tape {
            batch,
            activations,
            masks,
        });
        Ok(out)
    }

    /// Inference pass: dropout disabled, nothing recorded.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(x)?;
        let mut cur = x.data().to_vec();
        for i in 0..self.network.len() {
            cur = self
                .layer_forward::<ChaCha8Rng>(i, &cur, batch, Mode::Infer, None)?
                .0;
        }
        Ok(self.output_tensor(batch, cur))
    }

    /// Backpropagates `upstream` (shaped like the last output) through the
    /// recorded tape, accumulating parameter gradients unless frozen, and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let tape = self.take_tape(upstream)?;
        let mut dx = self.run_backward(&tape, upstream.data().to_vec(), true);
        let mut shape = vec![tape.batch];
        shape.extend_from_slice(self.network.input_shape());
        Tensor::new(shape, std::mem::take(&mut dx))
    }

    /// Like [`Model::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, upstream: &Tensor) -> Result<()> {
        let tape = self.take_tape(upstream)?;
        self.run_backward(&tape, upstream.data().to_vec(), false);
        Ok(())
    }

    fn take_tape(&mut self, upstream: &Tensor) -> Result<Tape> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let mut want = vec![tape.batch];
        want.extend_from_slice(self.network.output_shape());
        if upstream.shape() != want.as_slice() {
            return Err(Error::dim("upstream gradient", upstream.shape(), &want));
        }
        Ok(tape)
    }

    fn run_backward(&mut self, tape: &Tape, mut dy: Vec<f64>, input_grad: bool) -> Vec<f64> {
        for i in (0..self.network.len()).rev() {
            let need_dx = input_grad || i > 0;
            dy = self.layer_backward(i, tape, &dy, need_dx);
        }
        dy
    }

    fn layer_forward<R: Rng + ?Sized>(
        &self,
        i: usize,
        x: &[f64],
        batch: usize,
        mode: Mode,
        rng: Option<&mut R>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let spec = &self.network.layers[i];
        let in_shape = self.network.shape_at(i);
        let out_shape = self.network.shape_at(i + 1);
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let params = || {
            self.params
                .get(&self.network.layer_name(i))
                .expect("checked at construction")
        };
        let y = match spec {
            LayerSpec::Dense { out } => {
                let p = params();
                let mut y = Vec::with_capacity(batch * out);
                for _ in 0..batch {
                    y.extend_from_slice(p.bias.data());
                }
                gemm(batch, in_len, *out, x, false, p.weight.data(), true, 1.0, &mut y);
                y
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
            } => {
                let p = params();
                let g = ConvGeometry::same_halving(in_shape[1], in_shape[2], *kernel, *stride);
                let mut y = vec![0.0; batch * out_len];
                for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                    conv_forward_sample(
                        xs,
                        in_shape[0],
                        *filters,
                        p.weight.data(),
                        p.bias.data(),
                        &g,
                        ys,
                    );
                }
                y
            }
            LayerSpec::Deconv2d {
                filters,
                kernel,
                stride,
            } => {
                let p = params();
                let g = ConvGeometry::same_halving(out_shape[1], out_shape[2], *kernel, *stride);
                let mut y = vec![0.0; batch * out_len];
                for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                    deconv_forward_sample(
                        xs,
                        in_shape[0],
                        *filters,
                        p.weight.data(),
                        p.bias.data(),
                        &g,
                        ys,
                    );
                }
                y
            }
            LayerSpec::Sigmoid => x.iter().map(|v| sigmoid(*v)).collect(),
            LayerSpec::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::LeakyRelu { leak } => x
                .iter()
                .map(|v| if *v > 0.0 { *v } else { leak * v })
                .collect(),
            LayerSpec::Tanh => x.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Softmax => {
                let mut y = x.to_vec();
                for row in y.chunks_exact_mut(in_len) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.iter_mut().for_each(|v| *v = (*v - max).exp());
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= sum);
                }
                y
            }
            LayerSpec::Dropout { rate } => {
                check_dropout_rate(*rate)?;
                if mode == Mode::Train && *rate > 0.0 {
                    let rng = rng.ok_or_else(|| {
                        Error::State("training-mode dropout needs a random source".into())
                    })?;
                    let mask = dropout_mask(x.len(), *rate, rng);
                    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    return Ok((y, Some(mask)));
                }
                x.to_vec()
            }
            LayerSpec::Reshape { .. } | LayerSpec::Flatten => x.to_vec(),
        };
        Ok((y, None))
    }

    fn layer_backward(&mut self, i: usize, tape: &Tape, dy: &[f64], need_dx: bool) -> Vec<f64> {
        let batch = tape.batch;
        let x = &tape.activations[i];
        let y = &tape.activations[i + 1];
        let spec = self.network.layers[i].clone();
        let in_shape = self.network.shape_at(i).to_vec();
        let out_shape = self.network.shape_at(i + 1).to_vec();
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let name = self.network.layer_name(i);
        let frozen = self.frozen;

        match spec {
            LayerSpec::Dense { out } => {
                let p = self.params.get_mut(&name).expect("checked at construction");
                if !frozen {
                    let mut dw = vec![0.0; out * in_len];
                    gemm(out, batch, in_len, dy, true, x, false, 0.0, &mut dw);
                    let mut db = vec![0.0; out];
                    for row in dy.chunks_exact(out) {
                        db.iter_mut().zip(row).for_each(|(b, v)| *b += v);
                    }
                    p.weight.accumulate_grad(&dw);
                    p.bias.accumulate_grad(&db);
                }
                let mut dx = vec![0.0; batch * in_len];
                if need_dx {
                    gemm(batch, out, in_len, dy, false, p.weight.data(), false, 0.0, &mut dx);
                }
                dx
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
            } => {
                let p = self.params.get_mut(&name).expect("checked at construction");
                let g = ConvGeometry::same_halving(in_shape[1], in_shape[2], kernel, stride);
                let k = g.patch_len(in_shape[0]);
                let pl = g.out_len();
                let mut cols = vec![0.0; k * pl];
                let mut dw = vec![0.0; filters * k];
                let mut db = vec![0.0; filters];
                let mut dx = vec![0.0; batch * in_len];
                for s in 0..batch {
                    let dys = &dy[s * out_len..(s + 1) * out_len];
                    if !frozen {
                        im2col(&x[s * in_len..(s + 1) * in_len], in_shape[0], &g, &mut cols);
                        gemm(filters, pl, k, dys, false, &cols, true, 1.0, &mut dw);
                        for (o, row) in dys.chunks_exact(pl).enumerate() {
                            db[o] += row.iter().sum::<f64>();
                        }
                    }
                    if need_dx {
                        gemm(k, filters, pl, p.weight.data(), true, dys, false, 0.0, &mut cols);
                        col2im(&cols, in_shape[0], &g, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                if !frozen {
                    p.weight.accumulate_grad(&dw);
                    p.bias.accumulate_grad(&db);
                }
                dx
            }
            LayerSpec::Deconv2d {
                filters,
                kernel,
                stride,
            } => {
                let p = self.params.get_mut(&name).expect("checked at construction");
                let g = ConvGeometry::same_halving(out_shape[1], out_shape[2], kernel, stride);
                let c_in = in_shape[0];
                let k = g.patch_len(filters);
                let pl = g.out_len();
                let mut cols = vec![0.0; k * pl];
                let mut dw = vec![0.0; c_in * k];
                let mut db = vec![0.0; filters];
                let mut dx = vec![0.0; batch * in_len];
                let plane = out_shape[1] * out_shape[2];
                for s in 0..batch {
                    let dys = &dy[s * out_len..(s + 1) * out_len];
                    im2col(dys, filters, &g, &mut cols);
                    if !frozen {
                        let xs = &x[s * in_len..(s + 1) * in_len];
                        gemm(c_in, pl, k, xs, false, &cols, true, 1.0, &mut dw);
                        for (o, ch) in dys.chunks_exact(plane).enumerate() {
                            db[o] += ch.iter().sum::<f64>();
                        }
                    }
                    if need_dx {
                        let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                        gemm(c_in, k, pl, p.weight.data(), false, &cols, false, 0.0, dxs);
                    }
                }
                if !frozen {
                    p.weight.accumulate_grad(&dw);
                    p.bias.accumulate_grad(&db);
                }
                dx
            }
            LayerSpec::Sigmoid => dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
            LayerSpec::Relu => dy
                .iter()
                .zip(x)
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect(),
            LayerSpec::LeakyRelu { leak } => dy
                .iter()
                .zip(x)
                .map(|(g, v)| if *v > 0.0 { *g } else { leak * g })
                .collect(),
            LayerSpec::Tanh => dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect(),
            LayerSpec::Softmax => {
                let mut dx = vec![0.0; dy.len()];
                for ((dxr, dyr), yr) in dx
                    .chunks_exact_mut(in_len)
                    .zip(dy.chunks_exact(in_len))
                    .zip(y.chunks_exact(in_len))
                {
                    let inner: f64 = dyr.iter().zip(yr).map(|(g, p)| g * p).sum();
                    for ((d, g), p) in dxr.iter_mut().zip(dyr).zip(yr) {
                        *d = p * (g - inner);
                    }
                }
                dx
            }
            LayerSpec::Dropout { .. } => match &tape.masks[i] {
                Some(mask) => dy.iter().zip(mask).map(|(g, m)| g * m).collect(),
                None => dy.to_vec(),
            },
            LayerSpec::Reshape { .. } | LayerSpec::Flatten => dy.to_vec(),
        }
    }
}
