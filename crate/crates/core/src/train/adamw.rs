//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: Parameters + Clone> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One update: `theta -= lr * wd * theta`, then the bias-corrected Adam step.
/// Non-finite gradients abort before anything is modified.
pub fn adamw_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    lr: f64,
    weight_decay: f64,
    hyper: AdamHyper,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for g in &grad_tensors {
        if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} at index {i} is {}",
                g.name, g.data[i]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    if ps.len() != grad_tensors.len() {
        return Err(Error::Shape {
            context: "gradient tensor count".into(),
            expected: vec![ps.len()],
            actual: vec![grad_tensors.len()],
        });
    }
    for (((p, g), m), v) in ps.into_iter().zip(&grad_tensors).zip(ms).zip(vs) {
        if p.data.len() != g.data.len() {
            return Err(Error::Shape {
                context: format!("gradient of {}", p.name),
                expected: vec![p.data.len()],
                actual: g.shape.clone(),
            });
        }
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = hyper.beta1 * m.data[i] + (1.0 - hyper.beta1) * gi;
            v.data[i] = hyper.beta2 * v.data[i] + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= lr * weight_decay * p.data[i];
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
