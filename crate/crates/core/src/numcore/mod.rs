//! Numeric substrate: tensors, tagged parameters, a gradient tape, the
//! recurrent and perceptron layers built on it, Adam, a finite-difference
//! checker and the checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_update, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{Affine, Eta, GruCell};
pub use params::{Component, ComponentSet, Gradients, Init, ParamEntry, ParamId, ParameterStore};
pub use tensor::Tensor;

use crate::error::{AcgError, Result};

/// Standard logistic `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(AcgError::Empty("softmax of an empty vector".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(AcgError::NonFinite("softmax logits".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}
