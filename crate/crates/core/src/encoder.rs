//! Word-level and query-level bidirectional encoders.

use crate::corpus::LinearizedContext;
use crate::error::{AcgError, Result};
use crate::model::{AcgModel, Dropout};
use crate::numcore::{Graph, Var};

/// Per-position states `h_i = [→h_i; ←h_i]` and the forward halves.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEncodings {
    pub states: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
}

impl WordEncodings {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Query summaries `q_j` and query-level states `g_j = [→g_j; ←g_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncodings {
    pub summaries: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

/// Encoder outputs living on a graph.
#[derive(Debug, Clone)]
pub struct EncodedVars {
    pub words: Vec<Var>,
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub summaries: Vec<Var>,
    pub queries: Vec<Var>,
}

/// Bidirectional GRU pass over `inputs`; returns (forward, backward) states.
pub(crate) fn bidirectional(
    g: &mut Graph<'_>,
    fwd: &crate::numcore::GruCell,
    bwd: &crate::numcore::GruCell,
    inputs: &[Var],
) -> (Vec<Var>, Vec<Var>) {
    let mut h = g.constant(vec![0.0; fwd.hidden()]);
    let mut forward = Vec::with_capacity(inputs.len());
    for x in inputs {
        h = fwd.step(g, &[*x], h);
        forward.push(h);
    }
    let mut h = g.constant(vec![0.0; bwd.hidden()]);
    let mut backward = vec![h; inputs.len()];
    for (i, x) in inputs.iter().enumerate().rev() {
        h = bwd.step(g, &[*x], h);
        backward[i] = h;
    }
    (forward, backward)
}

fn check_ids(model: &AcgModel, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(AcgError::Empty("context has no tokens".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= model.config.vocab_size) {
        return Err(AcgError::OutOfRange(format!(
            "token id {bad} outside vocabulary of {}",
            model.config.vocab_size
        )));
    }
    Ok(())
}

fn check_separators(separators: &[usize], n: usize) -> Result<()> {
    if separators.is_empty() {
        return Err(AcgError::Empty("context has no separators".into()));
    }
    for (j, &k) in separators.iter().enumerate() {
        if k >= n || (j > 0 && k <= separators[j - 1]) {
            return Err(AcgError::OutOfRange(format!("separator {k} invalid for {n} positions")));
        }
    }
    Ok(())
}

/// Word-level pass on the graph.
pub fn encode_words_graph(
    g: &mut Graph<'_>,
    model: &AcgModel,
    token_ids: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
    check_ids(model, token_ids)?;
    let l = &model.layout;
    let inputs: Vec<Var> = token_ids
        .iter()
        .map(|&t| {
            let e = g.row(l.embedding, t);
            match dropout.as_deref_mut() {
                Some(d) => d.apply(g, e),
                None => e,
            }
        })
        .collect();
    let (forward, backward) = bidirectional(g, &l.enc_fwd, &l.enc_bwd, &inputs);
    let words = forward.iter().zip(&backward).map(|(f, b)| g.concat(&[*f, *b])).collect();
    Ok((words, forward, backward))
}

/// Query-level pass: `q_j` is the forward word state at the j-th separator.
pub fn encode_queries_graph(
    g: &mut Graph<'_>,
    model: &AcgModel,
    forward: &[Var],
    separators: &[usize],
) -> Result<(Vec<Var>, Vec<Var>)> {
    check_separators(separators, forward.len())?;
    let l = &model.layout;
    let summaries: Vec<Var> = separators
        .iter()
        .map(|&k| match &l.query_mlp {
            Some(mlp) => {
                let a = mlp.forward(g, &[forward[k]]);
                g.tanh(a)
            }
            None => forward[k],
        })
        .collect();
    let (f, b) = bidirectional(g, &l.qenc_fwd, &l.qenc_bwd, &summaries);
    let queries = f.iter().zip(&b).map(|(x, y)| g.concat(&[*x, *y])).collect();
    Ok((summaries, queries))
}

pub fn encode_graph(
    g: &mut Graph<'_>,
    model: &AcgModel,
    context: &LinearizedContext,
    dropout: Option<&mut Dropout>,
) -> Result<EncodedVars> {
    let (words, forward, backward) = encode_words_graph(g, model, &context.token_ids, dropout)?;
    let (summaries, queries) = encode_queries_graph(g, model, &forward, &context.separators)?;
    Ok(EncodedVars {
        words,
        forward,
        backward,
        summaries,
        queries,
    })
}

pub fn encode_words(model: &AcgModel, context: &LinearizedContext) -> Result<WordEncodings> {
    let mut g = Graph::new(&model.store);
    let (words, forward, _) = encode_words_graph(&mut g, model, &context.token_ids, None)?;
    g.status()?;
    Ok(WordEncodings {
        states: words.iter().map(|v| g.value(*v).to_vec()).collect(),
        forward: forward.iter().map(|v| g.value(*v).to_vec()).collect(),
    })
}

pub fn encode_queries(model: &AcgModel, words: &WordEncodings, separators: &[usize]) -> Result<QueryEncodings> {
    let h = model.config.word_hidden;
    if let Some(f) = words.forward.iter().find(|f| f.len() != h) {
        return Err(AcgError::dim("forward word state", h, f.len()));
    }
    let mut g = Graph::new(&model.store);
    let forward: Vec<Var> = words.forward.iter().map(|f| g.constant(f.clone())).collect();
    let (summaries, queries) = encode_queries_graph(&mut g, model, &forward, separators)?;
    g.status()?;
    Ok(QueryEncodings {
        summaries: summaries.iter().map(|v| g.value(*v).to_vec()).collect(),
        states: queries.iter().map(|v| g.value(*v).to_vec()).collect(),
    })
}
