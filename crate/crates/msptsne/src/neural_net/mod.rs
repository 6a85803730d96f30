//! Feed-forward network with ReLU hidden layers and a linear output.
//!
//! This is the parametric map from data space to embedding space. Forward
//! evaluation, exact backpropagation of an arbitrary output gradient, and
//! Adam updates are hand-rolled over contiguous slices: every row of a batch
//! is processed by the same straight-line code, so the output of a batch is
//! bitwise identical to the concatenation of the outputs of its sub-batches.
//! That property is what makes the out-of-sample extension exactly
//! consistent regardless of how points are grouped.

mod adam;
mod io;

pub use adam::AdamState;
pub use io::{deserialize_model, serialize_model};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer dims need an input, at least one hidden and an output layer, got {0:?}")]
    BadLayerDims(Vec<usize>),
    #[error("input has {got} columns, model expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("output gradient shape {got:?} does not match batch output {expected:?}")]
    GradShapeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("gradient shapes do not match model parameters at layer {layer}")]
    LayerShapeMismatch { layer: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Multilayer perceptron: ReLU on hidden layers, identity on the output.
///
/// `weights[l]` has shape (fan_in, fan_out) so each row of a weight matrix
/// is the contiguous contribution of one input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) layer_dims: Vec<usize>,
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
}

/// Per-layer pre-activations and activations of one forward pass.
///
/// `activations[0]` is the input batch; `activations[L]` is the network
/// output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre_activations: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty cache")
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

/// Loss gradients for every weight matrix and bias vector.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
}

/// He-uniform initialization: weights from U(-b, b) with b = sqrt(6/fan_in),
/// biases zero. Deterministic for a fixed seed.
pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 3 || layer_dims.contains(&0) {
        return Err(Error::BadLayerDims(layer_dims.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
    })
}

impl MlpModel {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Mutable flat view of one layer's weight matrix (row-major). Values
    /// can be edited; shapes cannot.
    pub fn weights_flat_mut(&mut self, layer: usize) -> &mut [f64] {
        self.weights[layer].as_slice_mut().expect("row-major weights")
    }

    /// Mutable flat view of one layer's bias vector.
    pub fn biases_flat_mut(&mut self, layer: usize) -> &mut [f64] {
        self.biases[layer].as_slice_mut().expect("contiguous bias")
    }

    fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass without keeping intermediates. Each row is mapped
    /// independently; batching never changes a row's output bits.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let cache = forward(self, x)?;
        Ok(cache.activations.into_iter().last().expect("output layer"))
    }
}

/// One dense layer applied to a batch: `out = act @ w + b`, written as
/// per-row axpy over the contiguous rows of `w`.
fn apply_layer(act: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (rows, fan_in) = act.dim();
    let fan_out = w.ncols();
    let w_data = w.as_slice().expect("row-major weights");
    let b_data = b.as_slice().expect("contiguous bias");
    let mut out = Array2::zeros((rows, fan_out));
    for (in_row, mut out_row) in act.rows().into_iter().zip(out.rows_mut()) {
        let in_row = in_row.as_slice().expect("row-major batch");
        let out_row = out_row.as_slice_mut().expect("row-major batch");
        out_row.copy_from_slice(b_data);
        for (k, &a) in in_row.iter().enumerate().take(fan_in) {
            if a == 0.0 {
                continue; // ReLU outputs are frequently exact zeros
            }
            let w_row = &w_data[k * fan_out..(k + 1) * fan_out];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += a * wv;
            }
        }
    }
    out
}

/// Forward pass over a batch (rows are samples), returning all per-layer
/// pre-activations and activations for backpropagation.
pub fn forward(model: &MlpModel, x: &Array2<f64>) -> Result<ForwardCache> {
    if x.ncols() != model.input_dim() {
        return Err(Error::InputDimMismatch {
            got: x.ncols(),
            expected: model.input_dim(),
        });
    }
    let layers = model.num_layers();
    let mut pre_activations = Vec::with_capacity(layers);
    let mut activations = Vec::with_capacity(layers + 1);
    activations.push(x.clone());
    for l in 0..layers {
        let z = apply_layer(&activations[l], &model.weights[l], &model.biases[l]);
        let a = if l + 1 < layers {
            z.mapv(|v| v.max(0.0))
        } else {
            z.clone() // linear output
        };
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardCache {
        pre_activations,
        activations,
    })
}

/// Exact backpropagation of `dloss_dy` (gradient of the loss w.r.t. the
/// network output) to every weight and bias. The ReLU subgradient at exactly
/// zero is taken as zero.
pub fn backward(model: &MlpModel, cache: &ForwardCache, dloss_dy: &Array2<f64>) -> Result<Gradients> {
    let out = cache.output();
    if dloss_dy.dim() != out.dim() {
        return Err(Error::GradShapeMismatch {
            got: dloss_dy.dim(),
            expected: out.dim(),
        });
    }
    let layers = model.num_layers();
    let mut d_weights: Vec<Array2<f64>> = model
        .weights
        .iter()
        .map(|w| Array2::zeros(w.dim()))
        .collect();
    let mut d_biases: Vec<Array1<f64>> = model
        .biases
        .iter()
        .map(|b| Array1::zeros(b.len()))
        .collect();

    let mut delta = dloss_dy.clone();
    for l in (0..layers).rev() {
        let act_in = &cache.activations[l];
        let (rows, fan_in) = act_in.dim();
        let fan_out = delta.ncols();

        // dW[k, :] += a[r, k] * delta[r, :], rows in ascending order
        {
            let dw = d_weights[l].as_slice_mut().expect("row-major grads");
            for r in 0..rows {
                let a_row = act_in.row(r);
                let a_row = a_row.as_slice().expect("row-major batch");
                let d_row = delta.row(r);
                let d_row = d_row.as_slice().expect("row-major batch");
                for (k, &a) in a_row.iter().enumerate().take(fan_in) {
                    if a == 0.0 {
                        continue;
                    }
                    let dw_row = &mut dw[k * fan_out..(k + 1) * fan_out];
                    for (g, &d) in dw_row.iter_mut().zip(d_row) {
                        *g += a * d;
                    }
                }
            }
        }
        for r in 0..rows {
            let d_row = delta.row(r);
            let d_row = d_row.as_slice().expect("row-major batch");
            let db = d_biases[l].as_slice_mut().expect("contiguous grads");
            for (g, &d) in db.iter_mut().zip(d_row) {
                *g += d;
            }
        }

        if l == 0 {
            break;
        }
        // delta through the layer input and the previous ReLU:
        // d_in[r, k] = dot(delta[r, :], w[k, :]) if z[r, k] > 0 else 0
        let w_data = model.weights[l].as_slice().expect("row-major weights");
        let z_prev = &cache.pre_activations[l - 1];
        let mut next = Array2::zeros((rows, fan_in));
        for r in 0..rows {
            let d_row = delta.row(r);
            let d_row = d_row.as_slice().expect("row-major batch");
            let z_row = z_prev.row(r);
            let z_row = z_row.as_slice().expect("row-major batch");
            let mut n_row = next.row_mut(r);
            let n_row = n_row.as_slice_mut().expect("row-major batch");
            for k in 0..fan_in {
                if z_row[k] > 0.0 {
                    let w_row = &w_data[k * fan_out..(k + 1) * fan_out];
                    n_row[k] = d_row.iter().zip(w_row).map(|(d, w)| d * w).sum();
                }
            }
        }
        delta = next;
    }

    Ok(Gradients {
        d_weights,
        d_biases,
    })
}

/// One Adam update of all model parameters; increments the step counter.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.step(model, grads)
}
