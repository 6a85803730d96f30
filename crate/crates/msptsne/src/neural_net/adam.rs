//! Adam optimizer state and update rule.

use ndarray::{Array1, Array2};

use super::{Error, Gradients, MlpModel, Result};

/// First and second moment accumulators plus hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

struct StepScale {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamState {
    /// Zeroed moments shaped like the model, with the usual
    /// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        AdamState {
            m_weights: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_weights: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_biases: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            v_biases: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update applied in place.
    pub(super) fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.d_weights.len() != self.m_weights.len()
            || grads.d_biases.len() != self.m_biases.len()
        {
            return Err(Error::LayerShapeMismatch {
                layer: grads.d_weights.len().min(self.m_weights.len()),
            });
        }
        for (layer, (dw, db)) in grads.d_weights.iter().zip(&grads.d_biases).enumerate() {
            if dw.dim() != self.m_weights[layer].dim() || db.len() != self.m_biases[layer].len() {
                return Err(Error::LayerShapeMismatch { layer });
            }
            if dw.iter().chain(db.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer });
            }
        }

        self.t += 1;
        let scale = StepScale {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            correction1: 1.0 - self.beta1.powi(self.t as i32),
            correction2: 1.0 - self.beta2.powi(self.t as i32),
        };

        for layer in 0..grads.d_weights.len() {
            update_slice(
                model.weights[layer].as_slice_mut().expect("row-major"),
                grads.d_weights[layer].as_slice().expect("row-major"),
                self.m_weights[layer].as_slice_mut().expect("row-major"),
                self.v_weights[layer].as_slice_mut().expect("row-major"),
                &scale,
            );
            update_slice(
                model.biases[layer].as_slice_mut().expect("contiguous"),
                grads.d_biases[layer].as_slice().expect("contiguous"),
                self.m_biases[layer].as_slice_mut().expect("contiguous"),
                self.v_biases[layer].as_slice_mut().expect("contiguous"),
                &scale,
            );
        }
        Ok(())
    }
}

fn update_slice(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], s: &StepScale) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
        let m_hat = m[i] / s.correction1;
        let v_hat = v[i] / s.correction2;
        params[i] -= s.learning_rate * m_hat / (v_hat.sqrt() + s.epsilon);
    }
}
