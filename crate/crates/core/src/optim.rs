//! Initialization and the adam update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams, PoolingMode, TensorName, Tensors, INPUT_WIDTH};
use crate::numeric::{gaussian_matrix, Rng};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Fan-in Gaussian weights (std `1/sqrt(cols)`) and zero biases.
///
/// Draw order is fixed (`W_xh`, `W_hc`, `W_cs`, `W_sy`) and `W_hc` is drawn
/// in both pooling modes, so the two modes start from the same shared weights
/// for a given stream.
pub fn init_params(dim: usize, pooling: PoolingMode, rng: &mut Rng) -> Result<ModelParams> {
    if dim == 0 {
        return Err(Error::usage("model dimension D must be at least 1"));
    }
    let fan_in = |n: usize| 1.0 / (n as f64).sqrt();
    let w_xh = gaussian_matrix(rng, dim, INPUT_WIDTH, fan_in(INPUT_WIDTH))?;
    let w_hc = gaussian_matrix(rng, 1, dim, fan_in(dim))?;
    let w_cs = gaussian_matrix(rng, dim, dim, fan_in(dim))?;
    let w_sy = gaussian_matrix(rng, 1, dim, fan_in(dim))?;
    Ok(ModelParams {
        w_xh,
        b_xh: vec![0.0; dim],
        w_hc,
        b_hc: 0.0,
        w_cs,
        b_cs: vec![0.0; dim],
        w_sy,
        b_sy: 0.0,
        dim,
        pooling,
    })
}

/// Moment estimates and hyperparameters of an adam run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {lr}")));
        }
        Ok(AdamState {
            m: Gradients::zeros(dim),
            v: Gradients::zeros(dim),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            lr,
        })
    }
}

/// One bias-corrected adam update of `params` in place.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.dim() != params.dim || state.m.dim() != params.dim {
        return Err(Error::shape(
            "adam_step",
            format!("params D={}", params.dim),
            format!("grads D={}, state D={}", grads.dim(), state.m.dim()),
        ));
    }
    if !(state.lr > 0.0) {
        return Err(Error::usage(format!("learning rate must be positive, got {}", state.lr)));
    }
    for name in TensorName::ALL {
        if let Some(index) = grads.tensor(name).iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name.as_str(),
                index,
            });
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.t as i32;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);

    for name in TensorName::ALL {
        let g = grads.tensor(name);
        let m = state.m.tensor_mut(name);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state.v.tensor_mut(name);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.m.tensor(name), state.v.tensor(name));
        let theta = params.tensor_mut(name);
        for ((p, mi), vi) in theta.iter_mut().zip(m).zip(v) {
            let m_hat = mi / correction1;
            let v_hat = vi / correction2;
            *p -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
