use super::params::{ComponentSet, ParameterStore};
use crate::error::{AcgError, Result};

/// Bias-corrected Adam moments for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParameterStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// Applies one Adam step from the store's gradient buffers. Parameters whose
/// tag is in `frozen` (and their moments) are left untouched.
pub fn adam_update(store: &mut ParameterStore, opt: &mut AdamState, frozen: ComponentSet) -> Result<()> {
    if opt.m.len() != store.len() {
        return Err(AcgError::MissingGradients(format!(
            "optimizer tracks {} parameters, store has {}",
            opt.m.len(),
            store.len()
        )));
    }
    for (e, m) in store.entries().iter().zip(&opt.m) {
        if m.len() != e.value.len() || e.grad.len() != e.value.len() {
            return Err(AcgError::MissingGradients(format!("shape mismatch for {}", e.name)));
        }
        if !e.grad.all_finite() {
            return Err(AcgError::NonFinite(format!("gradient of {}", e.name)));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, eps, lr) = (opt.beta1, opt.beta2, opt.eps, opt.lr);
    for ((e, m), v) in store.entries_mut().iter_mut().zip(&mut opt.m).zip(&mut opt.v) {
        if frozen.contains(e.tag) {
            continue;
        }
        let grad = e.grad.data().to_vec();
        let theta = e.value.data_mut();
        for k in 0..theta.len() {
            let g = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            theta[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
