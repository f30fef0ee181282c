use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::ensure;
use crate::{Error, Result};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn next_model_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully-connected layer `y = act(x·W + b)` with `W: [in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        ensure!(weights.shape().len() == 2, Shape, "weights must be 2-D, got {:?}", weights.shape());
        ensure!(
            bias.len() == weights.cols(),
            Shape,
            "bias length {} vs out_dim {}",
            bias.len(),
            weights.cols()
        );
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            weights: Tensor::new(vec![in_dim, out_dim], data).expect("consistent shape"),
            bias: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Per-layer parameter gradients, aligned with [`Mlp::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Tensor::zeros(l.weights.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    /// Flat view over all gradient blocks, weights then bias per layer.
    pub fn blocks(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().all(|t| t.data().iter().all(|&x| x == 0.0))
    }
}

/// Values saved by [`Mlp::forward`] for the matching [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    model_id: u64,
    generation: u64,
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |t| t.rows())
    }
}

/// Stack of dense layers.
///
/// Every parameter update bumps an internal generation counter so that a
/// cache produced before the update is rejected by `backward`.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: next_model_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        ensure!(!layers.is_empty(), Shape, "model needs at least one layer");
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].out_dim() == pair[1].in_dim(),
                Shape,
                "layer {} outputs {} but layer {} expects {}",
                i,
                pair[0].out_dim(),
                i + 1,
                pair[1].in_dim()
            );
        }
        Ok(Self {
            layers,
            id: next_model_id(),
            generation: 0,
        })
    }

    /// Glorot-initialized MLP through `dims`; hidden layers use `hidden`,
    /// the last layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(dims.len() >= 2, Shape, "need at least input and output dims, got {:?}", dims);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::glorot(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.bias.is_finite())
    }

    /// Mutable access to all parameter blocks; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.generation += 1;
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone().flatten_rows();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            z.add_row(&layer.bias)?;
            let a = z.map(|v| layer.activation.apply(v));
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            ForwardCache {
                model_id: self.id,
                generation: self.generation,
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone().flatten_rows();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            z.add_row(&layer.bias)?;
            x = z.map(|v| layer.activation.apply(v));
        }
        Ok(x)
    }

    /// Backpropagates `grad_output` (gradient of a loss summed over the
    /// batch w.r.t. the outputs) to the inputs and parameters.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<(Tensor, MlpGrads)> {
        let (g, grads) = self.backprop(cache, grad_output, true)?;
        Ok((g.expect("input gradient requested"), grads))
    }

    /// Parameter gradients only; skips the input gradient of the first layer.
    pub fn backward_params(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<MlpGrads> {
        Ok(self.backprop(cache, grad_output, false)?.1)
    }

    fn backprop(&self, cache: &ForwardCache, grad_output: &Tensor, want_input: bool) -> Result<(Option<Tensor>, MlpGrads)> {
        if cache.model_id != self.id || cache.generation != self.generation {
            return Err(Error::Contract(
                "forward cache does not belong to the current model parameters".into(),
            ));
        }
        ensure!(
            grad_output.rows() == cache.batch_size() && grad_output.cols() == self.out_dim(),
            Shape,
            "grad_output {:?} vs batch {} × out {}",
            grad_output.shape(),
            cache.batch_size(),
            self.out_dim()
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone().flatten_rows();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[i];
            let act = layer.activation;
            let dz = match act {
                Activation::Identity => g,
                _ => {
                    let mut dz = g;
                    for (d, &p) in dz.data_mut().iter_mut().zip(pre.data()) {
                        *d *= act.derivative(p);
                    }
                    dz
                }
            };
            let weights = cache.inputs[i].t_matmul(&dz)?;
            let bias = dz.sum_rows();
            grads.push(LayerGrads { weights, bias });
            if i == 0 && !want_input {
                grads.reverse();
                return Ok((None, MlpGrads { layers: grads }));
            }
            g = dz.matmul_t(&layer.weights)?;
        }
        grads.reverse();
        Ok((Some(g), MlpGrads { layers: grads }))
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        ensure!(batch.rows() >= 1, Shape, "empty batch");
        ensure!(
            batch.cols() == self.in_dim(),
            Shape,
            "batch has {} features, model expects {}",
            batch.cols(),
            self.in_dim()
        );
        Ok(())
    }
}
