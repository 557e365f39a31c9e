//! The description-to-code mapping network.
//!
//! A fully connected network with ReLU hidden layers and a linear output
//! layer. Parameters are stored as `f32`; every forward and backward
//! computation accumulates in `f64`.

mod grad;
mod loss;
mod model_file;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::{Error, Result};

pub use grad::{gradients, Gradients, LayerGradient};
pub use loss::{margin_loss, pairwise_sq_distances, MarginLoss};
pub use model_file::{load_model, read_model, save_model, write_model, MAP1_MAGIC, MAP1_VERSION};
pub use train::{train, validation_loss, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Default for MapperConfig {
    /// 1024 → 1280 → 896 → 384.
    fn default() -> Self {
        Self {
            input_dim: 1024,
            hidden_dims: vec![1280, 896],
            output_dim: 384,
        }
    }
}

impl MapperConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    /// Default network with a 768-wide output layer.
    pub fn wide_output() -> Self {
        Self {
            output_dim: 768,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Number of trainable values: Σ (fan_in·fan_out + fan_out).
pub fn param_count(config: &MapperConfig) -> usize {
    config
        .layer_shapes()
        .iter()
        .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
        .sum()
}

/// Dense layer; `weights` is `fan_out × fan_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn weight_row(&self, out: usize) -> &[f32] {
        &self.weights[out * self.fan_in..(out + 1) * self.fan_in]
    }

    /// `W·x + b` in f64.
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.fan_in)
            .zip(&self.bias)
            .map(|(row, b)| {
                *b as f64 + row.iter().zip(x).map(|(w, a)| *w as f64 * a).sum::<f64>()
            })
            .collect()
    }
}

/// The learned map from description space to code space.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperNetwork {
    layers: Vec<Layer>,
}

/// Pre-activations of every layer for one input; the last entry is the
/// network output.
pub(crate) struct Trace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

impl MapperNetwork {
    /// Wraps explicit layers, checking that consecutive widths agree and all
    /// values are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(Error::Shape(format!("layer {i} has a zero width")));
            }
            if l.weights.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::Shape(format!(
                    "layer {i}: {}x{} expects {} weights and {} biases, got {} and {}",
                    l.fan_out,
                    l.fan_in,
                    l.fan_in * l.fan_out,
                    l.fan_out,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if i > 0 && layers[i - 1].fan_out != l.fan_in {
                return Err(Error::Shape(format!(
                    "layer {i} takes {} inputs but layer {} produces {}",
                    l.fan_in,
                    i - 1,
                    layers[i - 1].fan_out
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(config: &MapperConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn config(&self) -> MapperConfig {
        MapperConfig {
            input_dim: self.input_dim(),
            hidden_dims: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.fan_out)
                .collect(),
            output_dim: self.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    /// Number of stored parameter values.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub(crate) fn trace(&self, x: &[f32]) -> Trace {
        let input: Vec<f64> = x.iter().map(|v| *v as f64).collect();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&act);
            if i + 1 < self.layers.len() {
                act = relu(&z);
            }
            pre.push(z);
        }
        Trace { input, pre }
    }

    pub(crate) fn forward_f64(&self, x: &[f32]) -> Vec<f64> {
        self.trace(x).pre.pop().unwrap()
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input vector has non-finite values".into()));
        }
        Ok(())
    }

    /// Predicted code vector for one description vector.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        Ok(self.forward_f64(x).into_iter().map(|v| v as f32).collect())
    }

    /// Maps every row of `inputs`.
    pub fn forward_batch(&self, inputs: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if inputs.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: inputs.dim(),
            });
        }
        let mut data = Vec::with_capacity(inputs.count() * self.output_dim());
        for row in inputs.rows() {
            data.extend(self.forward_f64(row).into_iter().map(|v| v as f32));
        }
        EmbeddingMatrix::new(self.output_dim(), data)
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
/// Deterministic for a given `(config, seed)`.
pub fn init_network(config: &MapperConfig, seed: u64) -> Result<MapperNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let limit = f32_at_most(bound);
            let weights = (0..fan_in * fan_out)
                .map(|_| {
                    let u = 2.0 * rng.random::<f64>() - 1.0;
                    ((u * bound) as f32).clamp(-limit, limit)
                })
                .collect();
            Layer {
                fan_in,
                fan_out,
                weights,
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MapperNetwork { layers })
}

/// Largest f32 not exceeding `x` (x > 0).
fn f32_at_most(x: f64) -> f32 {
    let f = x as f32;
    if f as f64 > x {
        f32::from_bits(f.to_bits() - 1)
    } else {
        f
    }
}
