//! Adam (optionally AMSGrad) and gradient clipping over flat tensor lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: true }
    }
}

/// Moment estimates, one buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub v_max: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<T>> = sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self { step: 0, v: m.clone(), v_max: m.clone(), m }
    }
}

/// One Adam update. Gradients are expected to be clipped already.
pub fn adam_step<T: Scalar>(
    params: Vec<&mut [T]>,
    grads: &[&[T]],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::dim(format!("tensor {i}: shape mismatch")));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at tensor {i}, index {j}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.eps);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v, vmax) = (&mut state.m[i], &mut state.v[i], &mut state.v_max[i]);
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let second = if cfg.amsgrad {
                vmax[k] = vmax[k].max(v[k]);
                vmax[k]
            } else {
                v[k]
            };
            let m_hat = m[k] / c1;
            let v_hat = second / c2;
            p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over all tensors.
pub fn global_norm<T: Scalar>(grads: &[&[T]]) -> T {
    grads.iter().flat_map(|g| g.iter()).fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Rescales every tensor when the global norm exceeds `clip_norm`; returns the pre-clip norm.
pub fn clip_gradients<T: Scalar>(grads: Vec<&mut [T]>, clip_norm: T) -> T {
    let norm = grads.iter().flat_map(|g| g.iter()).fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads {
            for v in g.iter_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

/// Element-wise clamp to `[-clip_value, clip_value]`.
pub fn clip_values<T: Scalar>(grads: Vec<&mut [T]>, clip_value: T) {
    for g in grads {
        for v in g.iter_mut() {
            *v = v.max(-clip_value).min(clip_value);
        }
    }
}
