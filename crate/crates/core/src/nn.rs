//! From-scratch dense feed-forward engine.
//!
//! A [`Network`] is a chain of affine layers, each optionally followed by
//! batch normalization (before the activation) and inverted dropout (after
//! it). Backpropagation is exact, including the batch-statistics path of
//! batch norm, and every source of randomness is an explicit seeded
//! generator passed by the caller.
//!
//! Nothing here knows about markets: inputs are matrices, targets are
//! vectors, the loss is mean squared error. Forecasting semantics live in
//! the fusion and training layers.

pub mod optim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::num::Real;

pub use optim::{OptimizerKind, OptimizerState};

/// Batch-norm variance floor.
pub const BN_EPSILON: f64 = 1e-5;
/// Running-statistics momentum: `running <- m*running + (1-m)*batch`.
pub const BN_MOMENTUM: f64 = 0.99;
/// Checkpoint schema version written by [`save_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("layer {index}: fan_in {fan_in} does not match previous fan_out {prev_out}")]
    MismatchedChain {
        index: usize,
        fan_in: usize,
        prev_out: usize,
    },
    #[error("network needs at least one layer")]
    EmptyNetwork,
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    CheckpointEncoding(#[from] serde_json::Error),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

/// Hidden-layer nonlinearity (or `Linear` for the output head).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative given the activation's input and output.
    fn derivative<T: Real>(self, input: T, output: T) -> T {
        match self {
            Activation::Tanh => T::one() - output * output,
            Activation::Relu => {
                if input > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => output * (T::one() - output),
            Activation::Linear => T::one(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        };
        f.write_str(name)
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(format!(
                "unknown activation `{other}` (expected tanh, relu, sigmoid, or linear)"
            )),
        }
    }
}

/// Shape and behavior of one layer: affine transform, optional batch norm,
/// activation, optional dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        batch_norm: bool,
        dropout_rate: f64,
    ) -> Result<Self, NnError> {
        if fan_in == 0 || fan_out == 0 {
            return Err(NnError::InvalidSpec(format!(
                "fan_in {fan_in} and fan_out {fan_out} must be at least 1"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::InvalidSpec(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        Ok(Self {
            fan_in,
            fan_out,
            activation,
            batch_norm,
            dropout_rate,
        })
    }

    /// A plain hidden layer: batch norm on, given activation and dropout.
    pub fn hidden(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        dropout_rate: f64,
    ) -> Result<Self, NnError> {
        Self::new(fan_in, fan_out, activation, true, dropout_rate)
    }

    /// The linear single-unit regression head: no batch norm, no dropout.
    pub fn output(fan_in: usize) -> Result<Self, NnError> {
        Self::new(fan_in, 1, Activation::Linear, false, 0.0)
    }
}

/// Glorot-normal weight standard deviation for a layer shape.
pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchNorm<T> {
    gamma: Vec<T>,
    beta: Vec<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    fn identity(width: usize) -> Self {
        Self {
            gamma: vec![T::one(); width],
            beta: vec![T::zero(); width],
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layer<T> {
    spec: LayerSpec,
    weight: Mat<T>,
    bias: Vec<T>,
    bn: Option<BatchNorm<T>>,
}

impl<T: Real> Layer<T> {
    fn affine(&self, input: &Mat<T>) -> Mat<T> {
        let mut z = input.matmul_transposed(&self.weight);
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v = *v + *b;
            }
        }
        z
    }

    #[cfg(test)]
    fn set_weights(&mut self, weight: Mat<T>, bias: Vec<T>) {
        assert_eq!(weight.rows(), self.spec.fan_out);
        assert_eq!(weight.cols(), self.spec.fan_in);
        assert_eq!(bias.len(), self.spec.fan_out);
        self.weight = weight;
        self.bias = bias;
    }
}

struct BnCache<T> {
    x_hat: Mat<T>,
    inv_std: Vec<T>,
}

struct LayerCache<T> {
    input: Mat<T>,
    bn: Option<BnCache<T>>,
    pre_act: Mat<T>,
    post_act: Mat<T>,
    mask: Option<Mat<T>>,
}

/// Intermediate values of one train-mode forward pass, consumed by
/// [`Network::backward`]. Holding the cache is what marks a pass as a
/// training pass; inference never builds one.
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

/// Gradients of the loss with respect to every parameter of a [`Network`],
/// in the network's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    layers: Vec<LayerGrads<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerGrads<T> {
    weight: Mat<T>,
    bias: Vec<T>,
    bn: Option<(Vec<T>, Vec<T>)>, // (gamma, beta)
}

impl<T: Real> Gradients<T> {
    /// Flat views of every gradient array, in canonical parameter order.
    pub(crate) fn arrays(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.data());
            out.push(layer.bias.as_slice());
            if let Some((gamma, beta)) = &layer.bn {
                out.push(gamma.as_slice());
                out.push(beta.as_slice());
            }
        }
        out
    }
}

/// A dense feed-forward network: the layer chain together with its
/// parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Glorot-normal initialization: weights drawn layer by layer in
    /// row-major order from N(0, 2/(fan_in+fan_out)); biases zero; batch
    /// norm starts as the identity (gamma 1, beta 0) with running mean 0 and
    /// running variance 1.
    pub fn new<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (index, pair) in specs.windows(2).enumerate() {
            if pair[1].fan_in != pair[0].fan_out {
                return Err(NnError::MismatchedChain {
                    index: index + 1,
                    fan_in: pair[1].fan_in,
                    prev_out: pair[0].fan_out,
                });
            }
        }
        let layers = specs
            .iter()
            .map(|&spec| {
                LayerSpec::new(
                    spec.fan_in,
                    spec.fan_out,
                    spec.activation,
                    spec.batch_norm,
                    spec.dropout_rate,
                )?;
                let normal = Normal::new(0.0, glorot_std(spec.fan_in, spec.fan_out))
                    .expect("positive std");
                let data = (0..spec.fan_in * spec.fan_out)
                    .map(|_| T::from_f64_lossy(normal.sample(rng)))
                    .collect();
                Ok(Layer {
                    spec,
                    weight: Mat::from_vec(spec.fan_out, spec.fan_in, data),
                    bias: vec![T::zero(); spec.fan_out],
                    bn: spec.batch_norm.then(|| BatchNorm::identity(spec.fan_out)),
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Ok(Self { layers })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").spec.fan_out
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Whether any layer normalizes over the batch (such layers need batch
    /// size >= 2 in train mode).
    pub fn uses_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    #[cfg(test)]
    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut Layer<T> {
        &mut self.layers[index]
    }

    /// Flat mutable views of every parameter array, in canonical order
    /// (per layer: weights, bias, then gamma and beta if batch-normed).
    /// Running statistics are not parameters and are not included.
    pub(crate) fn param_arrays_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let Layer {
                weight, bias, bn, ..
            } = layer;
            out.push(weight.data_mut());
            out.push(bias.as_mut_slice());
            if let Some(bn) = bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    /// Read-only counterpart of [`Network::param_arrays_mut`].
    pub(crate) fn param_arrays(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.data());
            out.push(layer.bias.as_slice());
            if let Some(bn) = &layer.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    /// Total number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.param_arrays().iter().map(|a| a.len()).sum()
    }

    /// Deterministic forward pass: batch norm uses running statistics and
    /// dropout is disabled, so each row's output is independent of the rest
    /// of the batch.
    pub fn forward_inference(&self, batch: &Mat<T>) -> Mat<T> {
        assert_eq!(
            batch.cols(),
            self.input_width(),
            "forward: batch width {} != input width {}",
            batch.cols(),
            self.input_width()
        );
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = layer.affine(&x);
            if let Some(bn) = &layer.bn {
                let eps = T::from_f64_lossy(BN_EPSILON);
                for i in 0..z.rows() {
                    for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                        let inv = T::one() / (bn.running_var[j] + eps).sqrt();
                        *v = bn.gamma[j] * (*v - bn.running_mean[j]) * inv + bn.beta[j];
                    }
                }
            }
            z.map_in_place(|v| layer.spec.activation.apply(v));
            x = z;
        }
        x
    }

    /// Draws this pass's dropout masks: one matrix per layer with a nonzero
    /// rate, `None` elsewhere. Entries are 0 with probability `rate`, else
    /// `1/(1-rate)` (inverted dropout), drawn row-major.
    pub fn draw_masks<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Option<Mat<T>>> {
        self.layers
            .iter()
            .map(|layer| {
                let rate = layer.spec.dropout_rate;
                (rate > 0.0).then(|| {
                    let data = (0..batch_size * layer.spec.fan_out)
                        .map(|_| mask_entry(rate, rng))
                        .collect();
                    Mat::from_vec(batch_size, layer.spec.fan_out, data)
                })
            })
            .collect()
    }

    /// Train-mode forward pass: batch norm uses the batch mean and
    /// population variance (and folds them into the running statistics),
    /// dropout masks are drawn from `rng`. Returns the outputs and the cache
    /// that [`Network::backward`] consumes.
    pub fn forward_train<R: Rng>(
        &mut self,
        batch: &Mat<T>,
        rng: &mut R,
    ) -> (Mat<T>, ForwardCache<T>) {
        let masks = self.draw_masks(batch.rows(), rng);
        self.forward_train_with_masks(batch, &masks)
    }

    /// Train-mode forward with caller-supplied dropout masks (one slot per
    /// layer). Fixing the masks makes the train-mode loss a deterministic
    /// function of the parameters, which is what finite-difference gradient
    /// verification needs.
    pub fn forward_train_with_masks(
        &mut self,
        batch: &Mat<T>,
        masks: &[Option<Mat<T>>],
    ) -> (Mat<T>, ForwardCache<T>) {
        assert_eq!(
            batch.cols(),
            self.input_width(),
            "forward: batch width {} != input width {}",
            batch.cols(),
            self.input_width()
        );
        assert_eq!(masks.len(), self.layers.len(), "one mask slot per layer");
        assert!(
            !self.uses_batch_norm() || batch.rows() >= 2,
            "train-mode batch norm needs batch size >= 2, got {}",
            batch.rows()
        );
        let n = batch.rows();
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (layer, mask) in self.layers.iter_mut().zip(masks) {
            let input = x;
            let z = layer.affine(&input);
            let (pre_act, bn_cache) = match &mut layer.bn {
                Some(bn) => {
                    let (normed, cache) = bn_forward_train(bn, &z, n);
                    (normed, Some(cache))
                }
                None => (z, None),
            };
            let mut post_act = pre_act.clone();
            post_act.map_in_place(|v| layer.spec.activation.apply(v));
            let output = match mask {
                Some(m) => {
                    assert_eq!(m.rows(), n, "mask batch size mismatch");
                    assert_eq!(m.cols(), layer.spec.fan_out, "mask width mismatch");
                    let mut dropped = post_act.clone();
                    for (v, k) in dropped.data_mut().iter_mut().zip(m.data()) {
                        *v = *v * *k;
                    }
                    dropped
                }
                None => post_act.clone(),
            };
            caches.push(LayerCache {
                input,
                bn: bn_cache,
                pre_act,
                post_act,
                mask: mask.clone(),
            });
            x = output;
        }
        (x, ForwardCache { layers: caches })
    }

    /// Exact gradients of the loss for every parameter, plus the gradient
    /// with respect to the network input (which fused models feed into
    /// upstream branches). `output_grad` is dLoss/dOutput, shaped like the
    /// forward output; `cache` must come from the matching train-mode pass.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &Mat<T>) -> (Gradients<T>, Mat<T>) {
        assert_eq!(cache.layers.len(), self.layers.len(), "cache layer count mismatch");
        let mut g = output_grad.clone();
        let mut layer_grads: Vec<LayerGrads<T>> = Vec::with_capacity(self.layers.len());
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            assert_eq!(g.rows(), lc.post_act.rows(), "gradient batch size mismatch");
            assert_eq!(g.cols(), layer.spec.fan_out, "gradient width mismatch");
            // Dropout: only surviving units pass gradient, scaled like the
            // forward pass.
            if let Some(m) = &lc.mask {
                for (v, k) in g.data_mut().iter_mut().zip(m.data()) {
                    *v = *v * *k;
                }
            }
            // Activation.
            for idx in 0..g.data().len() {
                let d = layer
                    .spec
                    .activation
                    .derivative(lc.pre_act.data()[idx], lc.post_act.data()[idx]);
                let scaled = g.data()[idx] * d;
                g.data_mut()[idx] = scaled;
            }
            // Batch norm: gamma/beta gradients, then the full batch-stat
            // chain back to the affine output.
            let bn_grads = match (&layer.bn, &lc.bn) {
                (Some(bn), Some(bc)) => {
                    let (dgamma, dbeta, dz) = bn_backward(bn, bc, &g);
                    g = dz;
                    Some((dgamma, dbeta))
                }
                (None, None) => None,
                _ => unreachable!("cache and layer disagree on batch norm"),
            };
            // Affine: dW[j,k] = sum_i g[i,j] * input[i,k]; db_j = sum_i g[i,j];
            // input grad gin[i,k] = sum_j g[i,j] * W[j,k].
            let mut dw = Mat::zeros(layer.spec.fan_out, layer.spec.fan_in);
            let mut db = vec![T::zero(); layer.spec.fan_out];
            let mut gin = Mat::zeros(g.rows(), layer.spec.fan_in);
            for i in 0..g.rows() {
                let grow = g.row(i).to_vec();
                let irow = lc.input.row(i);
                for (j, gj) in grow.iter().enumerate() {
                    db[j] = db[j] + *gj;
                    let wrow = layer.weight.row(j);
                    for k in 0..layer.spec.fan_in {
                        dw.set(j, k, dw.get(j, k) + *gj * irow[k]);
                        gin.set(i, k, gin.get(i, k) + *gj * wrow[k]);
                    }
                }
            }
            layer_grads.push(LayerGrads {
                weight: dw,
                bias: db,
                bn: bn_grads,
            });
            g = gin;
        }
        layer_grads.reverse();
        (
            Gradients {
                layers: layer_grads,
            },
            g,
        )
    }
}

fn bn_forward_train<T: Real>(bn: &mut BatchNorm<T>, z: &Mat<T>, n: usize) -> (Mat<T>, BnCache<T>) {
    debug_assert!(n >= 2);
    let width = z.cols();
    let eps = T::from_f64_lossy(BN_EPSILON);
    let momentum = T::from_f64_lossy(BN_MOMENTUM);
    let n_t = T::from_usize(n).expect("batch size fits in T");
    let mut out = z.clone();
    let mut x_hat = Mat::zeros(n, width);
    let mut inv_std = vec![T::zero(); width];
    for j in 0..width {
        let mut mean = T::zero();
        for i in 0..n {
            mean = mean + z.get(i, j);
        }
        mean = mean / n_t;
        let mut var = T::zero();
        for i in 0..n {
            let d = z.get(i, j) - mean;
            var = var + d * d;
        }
        var = var / n_t; // population (biased) variance
        let inv = T::one() / (var + eps).sqrt();
        inv_std[j] = inv;
        for i in 0..n {
            let xh = (z.get(i, j) - mean) * inv;
            x_hat.set(i, j, xh);
            out.set(i, j, bn.gamma[j] * xh + bn.beta[j]);
        }
        bn.running_mean[j] = momentum * bn.running_mean[j] + (T::one() - momentum) * mean;
        bn.running_var[j] = momentum * bn.running_var[j] + (T::one() - momentum) * var;
    }
    (out, BnCache { x_hat, inv_std })
}

/// Gradient through train-mode batch norm, including the dependence of the
/// batch mean and variance on every element of the batch:
/// `dz_i = inv_std/N * (N*dxh_i - sum(dxh) - xh_i * sum(dxh .* xh))`.
fn bn_backward<T: Real>(
    bn: &BatchNorm<T>,
    cache: &BnCache<T>,
    g: &Mat<T>,
) -> (Vec<T>, Vec<T>, Mat<T>) {
    let n = g.rows();
    let width = g.cols();
    let n_t = T::from_usize(n).expect("batch size fits in T");
    let mut dgamma = vec![T::zero(); width];
    let mut dbeta = vec![T::zero(); width];
    let mut dz = Mat::zeros(n, width);
    for j in 0..width {
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for i in 0..n {
            let gij = g.get(i, j);
            let xh = cache.x_hat.get(i, j);
            dgamma[j] = dgamma[j] + gij * xh;
            dbeta[j] = dbeta[j] + gij;
            let dxh = gij * bn.gamma[j];
            sum_dxh = sum_dxh + dxh;
            sum_dxh_xh = sum_dxh_xh + dxh * xh;
        }
        let scale = cache.inv_std[j] / n_t;
        for i in 0..n {
            let dxh = g.get(i, j) * bn.gamma[j];
            let xh = cache.x_hat.get(i, j);
            dz.set(i, j, scale * (n_t * dxh - sum_dxh - xh * sum_dxh_xh));
        }
    }
    (dgamma, dbeta, dz)
}

fn mask_entry<T: Real, R: Rng>(rate: f64, rng: &mut R) -> T {
    if rng.gen::<f64>() < rate {
        T::zero()
    } else {
        T::from_f64_lossy(1.0 / (1.0 - rate))
    }
}

/// Standalone inverted-dropout mask: each entry is 0 with probability
/// `rate`, else `1/(1-rate)`, so the expected masked activation equals the
/// unmasked one and inference needs no rescaling.
pub fn dropout_mask<T: Real, R: Rng>(rate: f64, width: usize, rng: &mut R) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    (0..width).map(|_| mask_entry(rate, rng)).collect()
}

/// Mean squared error `(1/N) * sum((pred - target)^2)`.
pub fn mse_loss<T: Real>(predictions: &[T], targets: &[T]) -> T {
    assert!(!predictions.is_empty(), "mse_loss: empty input");
    assert_eq!(
        predictions.len(),
        targets.len(),
        "mse_loss: {} predictions vs {} targets",
        predictions.len(),
        targets.len()
    );
    let n = T::from_usize(predictions.len()).expect("length fits in T");
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (*p - *t) * (*p - *t))
        .fold(T::zero(), |acc, v| acc + v)
        / n
}

/// Gradient of [`mse_loss`] with respect to the predictions:
/// `2*(pred - target)/N`.
pub fn mse_grad<T: Real>(predictions: &[T], targets: &[T]) -> Vec<T> {
    assert_eq!(
        predictions.len(),
        targets.len(),
        "mse_grad: {} predictions vs {} targets",
        predictions.len(),
        targets.len()
    );
    let n = T::from_usize(predictions.len()).expect("length fits in T");
    let two = T::from_f64_lossy(2.0);
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| two * (*p - *t) / n)
        .collect()
}

/// Serialized network: schema version, the seed the surrounding run was
/// started with, and the complete parameter set including running stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub seed: u64,
    pub network: Network<T>,
}

/// Writes a JSON checkpoint. `f64` values survive the round trip exactly
/// (shortest-representation encoding).
pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    network: &Network<T>,
    seed: u64,
) -> Result<(), NnError> {
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        seed,
        network: network.clone(),
    };
    let text = serde_json::to_string_pretty(&checkpoint)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`], rejecting unknown
/// schema versions.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, NnError> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint<T> = serde_json::from_str(&text)?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(NnError::CheckpointVersion {
            found: checkpoint.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn spec(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        batch_norm: bool,
        dropout: f64,
    ) -> LayerSpec {
        LayerSpec::new(fan_in, fan_out, activation, batch_norm, dropout).unwrap()
    }

    #[test]
    fn glorot_std_formula() {
        assert_relative_eq!(glorot_std(5, 4), (2.0f64 / 9.0).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(glorot_std(5, 4), 0.4714, epsilon = 1e-4);
    }

    #[test]
    fn glorot_samples_match_target_std() {
        // Many small layers at fan_in = fan_out = 8 to collect 1e5 samples.
        let mut r = rng(7);
        let mut samples: Vec<f64> = Vec::with_capacity(100_000);
        while samples.len() < 100_000 {
            let net: Network<f64> =
                Network::new(&[spec(8, 8, Activation::Linear, false, 0.0)], &mut r).unwrap();
            samples.extend_from_slice(net.param_arrays()[0]);
        }
        samples.truncate(100_000);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / samples.len() as f64;
        let target = glorot_std(8, 8);
        assert!((var.sqrt() - target).abs() / target < 0.02);
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn new_network_has_zero_biases_and_identity_bn() {
        let net: Network<f64> = Network::new(
            &[spec(3, 4, Activation::Tanh, true, 0.25), LayerSpec::output(4).unwrap()],
            &mut rng(1),
        )
        .unwrap();
        let params = net.param_arrays();
        // weight, bias, gamma, beta | weight, bias
        assert_eq!(params.len(), 6);
        assert!(params[1].iter().all(|&b| b == 0.0));
        assert!(params[2].iter().all(|&g| g == 1.0));
        assert!(params[3].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn network_rejects_mismatched_chain() {
        let err = Network::<f64>::new(
            &[spec(3, 4, Activation::Tanh, false, 0.0), spec(5, 1, Activation::Linear, false, 0.0)],
            &mut rng(1),
        )
        .unwrap_err();
        assert!(matches!(err, NnError::MismatchedChain { index: 1, .. }));
    }

    #[test]
    fn forward_matches_hand_computed_relu_example() {
        let mut net: Network<f64> = Network::new(
            &[spec(1, 2, Activation::Relu, false, 0.0), LayerSpec::output(2).unwrap()],
            &mut rng(1),
        )
        .unwrap();
        net.layer_mut(0)
            .set_weights(Mat::from_rows(&[vec![1.0], vec![-1.0]]), vec![0.0, 0.0]);
        net.layer_mut(1)
            .set_weights(Mat::from_rows(&[vec![1.0, 1.0]]), vec![0.0]);
        let out = net.forward_inference(&Mat::from_rows(&[vec![2.0]]));
        assert_eq!(out.get(0, 0), 2.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net: Network<f64> = Network::new(
            &[spec(3, 2, Activation::Tanh, false, 0.0), LayerSpec::output(2).unwrap()],
            &mut rng(1),
        )
        .unwrap();
        for arr in net.param_arrays_mut() {
            arr.fill(0.0);
        }
        let out = net.forward_inference(&Mat::from_rows(&[vec![0.3, -1.0, 2.5]]));
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn batch_norm_standardizes_a_column() {
        let mut net: Network<f64> = Network::new(
            &[spec(1, 1, Activation::Linear, true, 0.0)],
            &mut rng(1),
        )
        .unwrap();
        net.layer_mut(0)
            .set_weights(Mat::from_rows(&[vec![1.0]]), vec![0.0]);
        let batch = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let masks = vec![None];
        let (out, _) = net.forward_train_with_masks(&batch, &masks);
        // mean 2, population variance 2/3
        assert_relative_eq!(out.get(0, 0), -1.2247, epsilon = 1e-3);
        assert_relative_eq!(out.get(1, 0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.get(2, 0), 1.2247, epsilon = 1e-3);
    }

    #[test]
    fn batch_norm_running_stats_blend_with_momentum() {
        let mut net: Network<f64> = Network::new(
            &[spec(1, 1, Activation::Linear, true, 0.0)],
            &mut rng(1),
        )
        .unwrap();
        net.layer_mut(0)
            .set_weights(Mat::from_rows(&[vec![1.0]]), vec![0.0]);
        let batch = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let (_, _) = net.forward_train_with_masks(&batch, &[None]);
        // One update from (mean 0, var 1): 0.99*0 + 0.01*2 and 0.99*1 + 0.01*(2/3).
        let json = serde_json::to_value(&net).unwrap();
        let bn = &json["layers"][0]["bn"];
        assert_relative_eq!(bn["running_mean"][0].as_f64().unwrap(), 0.02, epsilon = 1e-12);
        assert_relative_eq!(
            bn["running_var"][0].as_f64().unwrap(),
            0.99 + 0.01 * (2.0 / 3.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn inference_output_is_independent_of_batch_composition() {
        let net: Network<f64> = Network::new(
            &[spec(2, 3, Activation::Tanh, true, 0.5), LayerSpec::output(3).unwrap()],
            &mut rng(9),
        )
        .unwrap();
        let solo = net.forward_inference(&Mat::from_rows(&[vec![0.4, -0.2]]));
        let mixed = net.forward_inference(&Mat::from_rows(&[
            vec![5.0, 5.0],
            vec![0.4, -0.2],
            vec![-3.0, 0.1],
        ]));
        assert_eq!(solo.get(0, 0), mixed.get(1, 0));
    }

    #[test]
    fn mse_loss_examples() {
        assert_eq!(mse_loss(&[0.5, -0.5], &[0.5, -0.5]), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert_relative_eq!(mse_loss(&[0.01], &[0.02]), 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn dropout_mask_rates() {
        let mut r = rng(3);
        let zero_rate: Vec<f64> = dropout_mask(0.0, 100, &mut r);
        assert!(zero_rate.iter().all(|&v| v == 1.0));

        let half: Vec<f64> = dropout_mask(0.5, 10_000, &mut r);
        assert!(half.iter().all(|&v| v == 0.0 || v == 2.0));

        let quarter: Vec<f64> = dropout_mask(0.25, 100_000, &mut r);
        let survivors = quarter.iter().filter(|&&v| v != 0.0).count() as f64 / 100_000.0;
        assert!((survivors - 0.75).abs() < 0.01 * 0.75 + 0.01);
        // Inverted scaling keeps the expectation at 1.
        let mean = quarter.iter().sum::<f64>() / quarter.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn backward_matches_closed_form_single_weight() {
        // y = w*x, one sample x=1, target 0, w=2: dL/dw = 2*(2-0)*1 = 4.
        let mut net: Network<f64> = Network::new(
            &[spec(1, 1, Activation::Linear, false, 0.0)],
            &mut rng(1),
        )
        .unwrap();
        net.layer_mut(0).set_weights(Mat::from_rows(&[vec![2.0]]), vec![0.0]);
        let batch = Mat::from_rows(&[vec![1.0]]);
        let (out, cache) = net.forward_train_with_masks(&batch, &[None]);
        let grad = mse_grad(out.data(), &[0.0]);
        let (grads, _) = net.backward(&cache, &Mat::from_vec(1, 1, grad));
        assert_eq!(grads.arrays()[0], &[4.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_parameter_grads() {
        let mut net: Network<f64> = Network::new(
            &[spec(2, 3, Activation::Sigmoid, true, 0.0), LayerSpec::output(3).unwrap()],
            &mut rng(5),
        )
        .unwrap();
        let batch = Mat::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]);
        let (_, cache) = net.forward_train_with_masks(&batch, &[None, None]);
        let (grads, input_grad) = net.backward(&cache, &Mat::zeros(2, 1));
        for arr in grads.arrays() {
            assert!(arr.iter().all(|&g| g == 0.0));
        }
        assert!(input_grad.data().iter().all(|&g| g == 0.0));
    }

    /// Central finite differences over every parameter of `net` on a fixed
    /// batch with fixed dropout masks, compared to the analytic gradients.
    fn max_fd_relative_error(
        net: &Network<f64>,
        batch: &Mat<f64>,
        targets: &[f64],
        masks: &[Option<Mat<f64>>],
    ) -> f64 {
        let mut work = net.clone();
        let (out, cache) = work.forward_train_with_masks(batch, masks);
        let grad = mse_grad(out.data(), targets);
        let (grads, _) = work.backward(&cache, &Mat::from_vec(out.rows(), 1, grad));
        let analytic: Vec<f64> = grads.arrays().concat();

        let h = 1e-5;
        let n_arrays = net.param_arrays().len();
        let mut fd = Vec::with_capacity(analytic.len());
        for a in 0..n_arrays {
            let len = net.param_arrays()[a].len();
            for i in 0..len {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    probe.param_arrays_mut()[a][i] += delta;
                    let (out, _) = probe.forward_train_with_masks(batch, masks);
                    mse_loss(out.data(), targets)
                };
                fd.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences_with_bn_and_dropout() {
        for (seed, activation) in [(11, Activation::Tanh), (12, Activation::Relu), (13, Activation::Sigmoid)] {
            let mut r = rng(seed);
            let net: Network<f64> = Network::new(
                &[
                    spec(5, 4, activation, true, 0.5),
                    spec(4, 3, activation, true, 0.25),
                    LayerSpec::output(3).unwrap(),
                ],
                &mut r,
            )
            .unwrap();
            let batch = Mat::from_vec(
                6,
                5,
                (0..30).map(|i| ((i * 37 % 19) as f64 - 9.0) / 10.0).collect(),
            );
            let targets: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 10.0).collect();
            let masks = net.draw_masks(6, &mut r);
            let err = max_fd_relative_error(&net, &batch, &targets, &masks);
            assert!(
                err <= 1e-4,
                "finite-difference mismatch {err:.3e} for {activation}"
            );
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let build = || {
            let mut r = rng(42);
            let mut net: Network<f64> = Network::new(
                &[spec(3, 4, Activation::Tanh, true, 0.5), LayerSpec::output(4).unwrap()],
                &mut r,
            )
            .unwrap();
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, &net);
            let batch = Mat::from_vec(4, 3, (0..12).map(|i| i as f64 / 11.0 - 0.5).collect());
            let targets = vec![0.1, -0.2, 0.3, 0.0];
            for _ in 0..5 {
                let (out, cache) = net.forward_train(&batch, &mut r);
                let grad = mse_grad(out.data(), &targets);
                let (grads, _) = net.backward(&cache, &Mat::from_vec(4, 1, grad));
                opt.step(&mut net, &grads);
            }
            net
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut r = rng(21);
        let mut net: Network<f64> = Network::new(
            &[spec(2, 3, Activation::Relu, true, 0.25), LayerSpec::output(3).unwrap()],
            &mut r,
        )
        .unwrap();
        // Touch the running stats so they are non-trivial.
        let batch = Mat::from_rows(&[vec![0.1, 0.9], vec![-0.4, 0.2], vec![0.3, -0.7]]);
        let masks = net.draw_masks(3, &mut r);
        let _ = net.forward_train_with_masks(&batch, &masks);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&path, &net, 99).unwrap();
        let loaded: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.version, CHECKPOINT_VERSION);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.network, net);
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net: Network<f64> =
            Network::new(&[spec(1, 1, Activation::Linear, false, 0.0)], &mut rng(1)).unwrap();
        save_checkpoint(&path, &net, 0).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"version\": 1", "\"version\": 999");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(NnError::CheckpointVersion { found: 999, .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverted_dropout_preserves_expectation(rate in 0.0f64..0.9, seed in 0u64..1000) {
                let mut r = rng(seed);
                let mask: Vec<f64> = dropout_mask(rate, 50_000, &mut r);
                let mean = mask.iter().sum::<f64>() / mask.len() as f64;
                // E[mask] = 1; allow Monte-Carlo noise.
                prop_assert!((mean - 1.0).abs() < 0.05);
            }

            #[test]
            fn activations_and_derivatives_are_consistent(x in -3.0f64..3.0) {
                for act in [Activation::Tanh, Activation::Relu, Activation::Sigmoid, Activation::Linear] {
                    let y = act.apply(x);
                    let h = 1e-6;
                    let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                    let analytic = act.derivative(x, y);
                    // ReLU is non-differentiable at 0; skip the kink.
                    if act == Activation::Relu && x.abs() < 1e-5 {
                        continue;
                    }
                    prop_assert!((fd - analytic).abs() < 1e-6, "{act} at {x}: {fd} vs {analytic}");
                }
            }
        }
    }
}
