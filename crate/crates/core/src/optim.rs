//! Adam with bias correction and optional global-norm gradient clipping.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
///
/// Moments are created lazily with the shape of their parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<F: Float = f32> {
    t: u64,
    moments: HashMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Float> AdamState<F> {
    pub fn new() -> Self {
        AdamState {
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&[F], &[F])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// Euclidean norm of all gradients together.
pub fn global_grad_norm<F: Float>(params: &ParamStore<F>) -> Result<f64> {
    let mut sq = 0.0;
    for (name, t) in params.iter() {
        let g = t.grad().ok_or_else(|| Error::MissingGrad(name.to_owned()))?;
        sq += g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// One Adam update of every parameter from its accumulated gradient.
///
/// With `clip = Some(c)` gradients are scaled by `c / norm` when their global
/// norm exceeds `c`. Updated parameters are fresh leaves with empty gradients.
pub fn adam_step<F: Float>(
    params: &mut ParamStore<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
    lr: f64,
    clip: Option<f64>,
) -> Result<()> {
    let mut grads = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let g = t.grad().ok_or_else(|| Error::MissingGrad(name.to_owned()))?;
        grads.push((name.to_owned(), g));
    }
    let scale = match clip {
        Some(c) => {
            let norm = global_grad_norm(params)?;
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::from_f64_lossy(cfg.beta1), F::from_f64_lossy(cfg.beta2));
    let c1 = F::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = F::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let (lr, eps, scale) = (F::from_f64_lossy(lr), F::from_f64_lossy(cfg.eps), F::from_f64_lossy(scale));
    let one = F::one();

    for (name, g) in grads {
        let p = params.get(&name)?;
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![F::zero(); g.len()], vec![F::zero(); g.len()]));
        if m.len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: vec![m.len()],
                right: p.shape().to_vec(),
            });
        }
        let mut data = p.data().to_vec();
        for (((w, &gi), mi), vi) in data.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi * scale;
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
        params.set_data(&name, data)?;
    }
    Ok(())
}
