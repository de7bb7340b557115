//! Word-level and query-level attention, their query-aware combination and
//! the context vector.

use std::io::Write;

use serde::Serialize;

use crate::encoder::{QueryEncodings, WordEncodings};
use crate::error::{AcgError, Result};
use crate::model::AcgModel;
use crate::numcore::{softmax, Eta, Graph, Var};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionWeights {
    pub word: Vec<f64>,
    pub query: Vec<f64>,
    pub combined: Vec<f64>,
}

/// Softmax over `η(s_{t−1}, h_i)`, with the `h_i` projections precomputed.
pub fn word_attention_graph(g: &mut Graph<'_>, eta: &Eta, s_prev: Var, word_proj: &[Var]) -> Var {
    let ps = eta.project(g, 0, s_prev);
    let logits: Vec<Var> = word_proj.iter().map(|p| eta.logit_from(g, &[ps, *p])).collect();
    let l = g.stack(&logits);
    g.softmax(l)
}

/// Softmax over `η(s_{t−1}, g_j, y_{t−1})`, with the `g_j` projections precomputed.
pub fn query_attention_graph(g: &mut Graph<'_>, eta: &Eta, s_prev: Var, query_proj: &[Var], y_prev: Var) -> Var {
    let ps = eta.project(g, 0, s_prev);
    let py = eta.project(g, 2, y_prev);
    let shared = g.add(ps, py);
    let logits: Vec<Var> = query_proj.iter().map(|p| eta.logit_from(g, &[shared, *p])).collect();
    let l = g.stack(&logits);
    g.softmax(l)
}

/// `a_i ∝ a^w_i · a^q_{owner(i)}`.
pub fn combine_graph(g: &mut Graph<'_>, word: Var, query: Var, owners: &[usize]) -> Var {
    let spread = g.gather(query, owners);
    let prod = g.mul(word, spread);
    g.normalize(prod)
}

pub fn context_graph(g: &mut Graph<'_>, weights: Var, words: &[Var]) -> Var {
    g.weighted_sum(weights, words)
}

pub fn word_attention(model: &AcgModel, s_prev: &[f64], words: &WordEncodings) -> Result<Vec<f64>> {
    let eta = &model.layout.word_attention;
    let logits = words
        .states
        .iter()
        .map(|h| eta.eval_values(&model.store, &[s_prev, h]))
        .collect::<Result<Vec<f64>>>()?;
    softmax(&logits)
}

pub fn query_attention(
    model: &AcgModel,
    s_prev: &[f64],
    queries: &QueryEncodings,
    y_prev: &[f64],
) -> Result<Vec<f64>> {
    let eta = &model.layout.query_attention;
    let logits = queries
        .states
        .iter()
        .map(|q| eta.eval_values(&model.store, &[s_prev, q, y_prev]))
        .collect::<Result<Vec<f64>>>()?;
    softmax(&logits)
}

/// Multiplies each word weight by its owning query's weight and renormalizes.
pub fn combine_weights(word: &[f64], query: &[f64], owners: &[usize]) -> Result<Vec<f64>> {
    if owners.len() != word.len() {
        return Err(AcgError::dim("owner map", word.len(), owners.len()));
    }
    if let Some(&j) = owners.iter().find(|&&j| j >= query.len()) {
        return Err(AcgError::OutOfRange(format!("owner {j} for {} queries", query.len())));
    }
    let prod: Vec<f64> = word.iter().zip(owners).map(|(w, &j)| w * query[j]).collect();
    let z: f64 = prod.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Err(AcgError::NonFinite("attention products sum to zero".into()));
    }
    Ok(prod.into_iter().map(|p| p / z).collect())
}

/// `c = Σ_i a_i h_i`.
pub fn context_vector(weights: &[f64], states: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != states.len() {
        return Err(AcgError::dim("context weights", states.len(), weights.len()));
    }
    let d = states.first().map(Vec::len).unwrap_or(0);
    let mut c = vec![0.0; d];
    for (a, h) in weights.iter().zip(states) {
        if h.len() != d {
            return Err(AcgError::dim("encoder state", d, h.len()));
        }
        for (o, x) in c.iter_mut().zip(h) {
            *o += a * x;
        }
    }
    Ok(c)
}

/// One decode step of an attention trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionStep {
    pub step: usize,
    pub token: String,
    pub p_copy: f64,
    pub source: Vec<String>,
    pub weights: AttentionWeights,
}

/// Writes one JSON object per step.
pub fn write_trace<W: Write>(mut out: W, steps: &[AttentionStep]) -> Result<()> {
    for s in steps {
        let line = serde_json::to_string(s).map_err(|e| AcgError::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
