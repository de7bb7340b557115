//! Recurrent decoder with a generator head, a copy head over source positions
//! (slot 0 is `<unk>`), a copy/generate switch, and their fused mixture.

mod beam;

pub use beam::{beam_search, score_query, suggest_k, DecodeConfig, Hypothesis, StepModel, Suggestion};

use std::collections::HashMap;

use crate::attention::{
    combine_graph, context_graph, query_attention_graph, word_attention_graph, AttentionStep, AttentionWeights,
};
use crate::corpus::{linearize, reserved, truncate_context, LinearizedContext, Query, TrainingExample, Vocabulary, SEP_TOKEN};
use crate::encoder::{encode_graph, EncodedVars};
use crate::error::{AcgError, Result};
use crate::model::{AcgModel, Dropout};
use crate::numcore::{Graph, Var};

/// Which heads a forward pass needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub generate: bool,
    pub copy: bool,
    pub switch: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        generate: true,
        copy: true,
        switch: true,
    };
}

/// Per-context terms reused at every decode step.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub words: Vec<Var>,
    pub word_proj: Vec<Var>,
    pub query_proj: Vec<Var>,
    /// Copy-scorer projections; index 0 is the projected `<unk>` embedding.
    pub copy_proj: Vec<Var>,
    pub owners: Vec<usize>,
    pub s0: Var,
}

pub fn prepare(g: &mut Graph<'_>, model: &AcgModel, enc: &EncodedVars, owners: Vec<usize>) -> Prepared {
    let l = &model.layout;
    let n = enc.words.len();
    let init = l.init_state.forward(g, &[enc.forward[n - 1], enc.backward[0]]);
    let s0 = g.tanh(init);
    let word_proj = enc.words.iter().map(|h| l.word_attention.project(g, 1, *h)).collect();
    let query_proj = enc.queries.iter().map(|q| l.query_attention.project(g, 1, *q)).collect();
    let copy_proj = if model.config.copy_enabled {
        let e = g.row(l.embedding, reserved::UNK);
        let unk = l.unk_projection.forward(g, &[e]);
        std::iter::once(unk)
            .chain(enc.words.iter().copied())
            .map(|h| l.copy_scorer.project(g, 1, h))
            .collect()
    } else {
        Vec::new()
    };
    Prepared {
        words: enc.words.clone(),
        word_proj,
        query_proj,
        copy_proj,
        owners,
        s0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub state: Var,
    pub gen: Option<Var>,
    pub copy: Option<Var>,
    pub p_copy: Option<Var>,
    pub word: Var,
    pub query: Var,
    pub combined: Var,
}

/// One decoder step: attention reads `s_{t−1}`, the copy scorer and the
/// switch read the updated `s_t`.
pub fn step_graph(g: &mut Graph<'_>, model: &AcgModel, prep: &Prepared, s_prev: Var, y_prev: Var, heads: Heads) -> StepVars {
    let l = &model.layout;
    let word = word_attention_graph(g, &l.word_attention, s_prev, &prep.word_proj);
    let query = query_attention_graph(g, &l.query_attention, s_prev, &prep.query_proj, y_prev);
    let combined = combine_graph(g, word, query, &prep.owners);
    let c = context_graph(g, combined, &prep.words);
    let state = l.decoder.step(g, &[y_prev, c], s_prev);

    let gen = heads.generate.then(|| {
        let logits = l.generator.forward(g, &[state]);
        g.softmax(logits)
    });
    let copy_on = model.config.copy_enabled;
    let copy = (copy_on && heads.copy).then(|| {
        let ps = l.copy_scorer.project(g, 0, state);
        let logits: Vec<Var> = prep.copy_proj.iter().map(|p| l.copy_scorer.logit_from(g, &[ps, *p])).collect();
        let stacked = g.stack(&logits);
        g.softmax(stacked)
    });
    let p_copy = (copy_on && heads.switch).then(|| {
        let w = g.param(l.switch);
        let z = g.dot(w, state);
        g.sigmoid(z)
    });
    StepVars {
        state,
        gen,
        copy,
        p_copy,
        word,
        query,
        combined,
    }
}

fn embed(g: &mut Graph<'_>, model: &AcgModel, id: usize, dropout: Option<&mut Dropout>) -> Var {
    let e = g.row(model.layout.embedding, id);
    match dropout {
        Some(d) => d.apply(g, e),
        None => e,
    }
}

/// Teacher-forced pass over the target of `example`.
pub fn teacher_forced_graph(
    g: &mut Graph<'_>,
    model: &AcgModel,
    example: &TrainingExample,
    heads: Heads,
    mut dropout: Option<&mut Dropout>,
) -> Result<Vec<StepVars>> {
    let enc = encode_graph(g, model, &example.context, dropout.as_deref_mut())?;
    let prep = prepare(g, model, &enc, example.context.owners());
    let mut s = prep.s0;
    let mut prev = reserved::START;
    let mut out = Vec::with_capacity(example.target.len());
    for &target in &example.generator_targets {
        let y = embed(g, model, prev, dropout.as_deref_mut());
        let step = step_graph(g, model, &prep, s, y, heads);
        s = step.state;
        prev = target;
        out.push(step);
    }
    g.status()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput {
    pub gen_dist: Vec<f64>,
    pub copy_dist: Vec<f64>,
    pub p_copy: f64,
    pub state: DecoderState,
    pub attention: AttentionWeights,
}

/// Encoder outputs and cached projections for one context, as plain values.
#[derive(Debug, Clone)]
pub struct EncodedContext {
    pub surface: Vec<String>,
    pub owners: Vec<usize>,
    pub words: Vec<Vec<f64>>,
    word_proj: Vec<Vec<f64>>,
    query_proj: Vec<Vec<f64>>,
    copy_proj: Vec<Vec<f64>>,
    s0: Vec<f64>,
}

impl EncodedContext {
    pub fn new(model: &AcgModel, context: &LinearizedContext) -> Result<Self> {
        let mut g = Graph::new(&model.store);
        let enc = encode_graph(&mut g, model, context, None)?;
        let prep = prepare(&mut g, model, &enc, context.owners());
        g.status()?;
        let vals = |vs: &[Var]| vs.iter().map(|v| g.value(*v).to_vec()).collect::<Vec<_>>();
        Ok(EncodedContext {
            surface: context.surface.clone(),
            owners: prep.owners.clone(),
            words: vals(&prep.words),
            word_proj: vals(&prep.word_proj),
            query_proj: vals(&prep.query_proj),
            copy_proj: vals(&prep.copy_proj),
            s0: g.value(prep.s0).to_vec(),
        })
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            s: self.s0.clone(),
            t: 0,
        }
    }

    fn load(&self, g: &mut Graph<'_>) -> Prepared {
        let mut consts = |vs: &[Vec<f64>]| vs.iter().map(|v| g.constant(v.clone())).collect::<Vec<_>>();
        let words = consts(&self.words);
        let word_proj = consts(&self.word_proj);
        let query_proj = consts(&self.query_proj);
        let copy_proj = consts(&self.copy_proj);
        let s0 = g.constant(self.s0.clone());
        Prepared {
            words,
            word_proj,
            query_proj,
            copy_proj,
            owners: self.owners.clone(),
            s0,
        }
    }
}

pub fn decoder_step(model: &AcgModel, enc: &EncodedContext, prev: &DecoderState, prev_token: usize) -> Result<DecoderStepOutput> {
    if prev.s.len() != model.config.decoder_hidden {
        return Err(AcgError::dim("decoder state", model.config.decoder_hidden, prev.s.len()));
    }
    if prev_token >= model.config.vocab_size {
        return Err(AcgError::OutOfRange(format!("previous token id {prev_token}")));
    }
    let mut g = Graph::new(&model.store);
    let prep = enc.load(&mut g);
    let s_prev = g.constant(prev.s.clone());
    let y = g.row(model.layout.embedding, prev_token);
    let step = step_graph(&mut g, model, &prep, s_prev, y, Heads::ALL);
    g.status()?;
    let n = enc.words.len();
    let (copy_dist, p_copy) = match (step.copy, step.p_copy) {
        (Some(c), Some(p)) => (g.value(c).to_vec(), g.scalar(p)),
        _ => {
            let mut c = vec![0.0; n + 1];
            c[0] = 1.0;
            (c, 0.0)
        }
    };
    Ok(DecoderStepOutput {
        gen_dist: g.value(step.gen.expect("generator head requested")).to_vec(),
        copy_dist,
        p_copy,
        state: DecoderState {
            s: g.value(step.state).to_vec(),
            t: prev.t + 1,
        },
        attention: AttentionWeights {
            word: g.value(step.word).to_vec(),
            query: g.value(step.query).to_vec(),
            combined: g.value(step.combined).to_vec(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEntry {
    pub token: String,
    pub generated: f64,
    pub copied: f64,
}

impl MixtureEntry {
    pub fn prob(&self) -> f64 {
        self.generated + self.copied
    }
}

/// Fused copy/generate distribution over the vocabulary and the source tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDistribution {
    pub entries: Vec<MixtureEntry>,
    /// Mass on reserved ids and on the copier's `<unk>` slot.
    pub residual: f64,
    /// `(1 − p_copy) · gen[<oov>]`, used when scoring impossible tokens.
    pub oov_fallback: f64,
}

impl MixtureDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(MixtureEntry::prob).sum::<f64>() + self.residual
    }

    pub fn get(&self, token: &str) -> Option<&MixtureEntry> {
        self.entries.iter().find(|e| e.token == token)
    }
}

pub fn fuse(step: &DecoderStepOutput, surface: &[String], vocab: &Vocabulary) -> MixtureDistribution {
    fuse_parts(&step.gen_dist, &step.copy_dist, step.p_copy, surface, vocab)
}

pub fn fuse_parts(gen: &[f64], copy: &[f64], p_copy: f64, surface: &[String], vocab: &Vocabulary) -> MixtureDistribution {
    let pg = 1.0 - p_copy;
    let mut entries: Vec<MixtureEntry> = Vec::with_capacity(gen.len());
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut residual = p_copy * copy[0];
    for (id, &p) in gen.iter().enumerate() {
        if Vocabulary::is_emittable(id) {
            index.insert(vocab.token(id), entries.len());
            entries.push(MixtureEntry {
                token: vocab.token(id).to_string(),
                generated: pg * p,
                copied: 0.0,
            });
        } else {
            residual += pg * p;
        }
    }
    for (i, tok) in surface.iter().enumerate() {
        let mass = p_copy * copy[i + 1];
        match index.get(tok.as_str()) {
            Some(&k) => entries[k].copied += mass,
            None if vocab.contains(tok) => residual += mass,
            None => {
                index.insert(tok.as_str(), entries.len());
                entries.push(MixtureEntry {
                    token: tok.clone(),
                    generated: 0.0,
                    copied: mass,
                });
            }
        }
    }
    MixtureDistribution {
        entries,
        residual,
        oov_fallback: pg * gen[reserved::OOV],
    }
}

/// Mixture probability of `token`, or the `<oov>` fallback when neither head
/// can produce it.
pub fn mixture_prob(gen: &[f64], copy: &[f64], p_copy: f64, surface: &[String], vocab: &Vocabulary, token: &str) -> f64 {
    let generated = match vocab.get(token) {
        Some(id) if Vocabulary::is_emittable(id) => Some((1.0 - p_copy) * gen[id]),
        _ => None,
    };
    let positions: Vec<usize> = surface.iter().enumerate().filter(|(_, s)| *s == token).map(|(i, _)| i + 1).collect();
    if generated.is_none() && positions.is_empty() {
        return (1.0 - p_copy) * gen[reserved::OOV];
    }
    generated.unwrap_or(0.0) + p_copy * positions.iter().map(|&i| copy[i]).sum::<f64>()
}

/// The `top` most probable emittable candidates, ordered by probability
/// descending then token ascending.
pub fn top_candidates(
    gen: &[f64],
    copy: &[f64],
    p_copy: f64,
    surface: &[String],
    vocab: &Vocabulary,
    top: usize,
) -> Vec<(String, f64)> {
    let pg = 1.0 - p_copy;
    let mut probs: Vec<f64> = gen.iter().map(|p| pg * p).collect();
    let mut extra: Vec<(String, f64)> = Vec::new();
    for (i, tok) in surface.iter().enumerate() {
        let mass = p_copy * copy[i + 1];
        match vocab.get(tok) {
            Some(id) => probs[id] += mass,
            None => match extra.iter_mut().find(|(t, _)| t == tok) {
                Some(e) => e.1 += mass,
                None => extra.push((tok.clone(), mass)),
            },
        }
    }
    let mut cands: Vec<(&str, f64)> = probs
        .iter()
        .enumerate()
        .filter(|(id, _)| Vocabulary::is_emittable(*id))
        .map(|(id, p)| (vocab.token(id), *p))
        .chain(extra.iter().map(|(t, p)| (t.as_str(), *p)))
        .collect();
    let order = |a: &(&str, f64), b: &(&str, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0));
    if top < cands.len() {
        cands.select_nth_unstable_by(top, order);
        cands.truncate(top);
    }
    cands.sort_by(order);
    cands.into_iter().map(|(t, p)| (t.to_string(), p)).collect()
}

/// The full model as a [`StepModel`] over one encoded context.
pub struct AcgDecoder<'a> {
    model: &'a AcgModel,
    vocab: &'a Vocabulary,
    enc: EncodedContext,
}

impl<'a> AcgDecoder<'a> {
    pub fn new(model: &'a AcgModel, vocab: &'a Vocabulary, context: &LinearizedContext) -> Result<Self> {
        if vocab.len() != model.config.vocab_size {
            return Err(AcgError::dim("vocabulary size", model.config.vocab_size, vocab.len()));
        }
        Ok(AcgDecoder {
            model,
            vocab,
            enc: EncodedContext::new(model, context)?,
        })
    }

    pub fn encoded(&self) -> &EncodedContext {
        &self.enc
    }

    fn prev_id(&self, prev: Option<&str>) -> usize {
        match prev {
            None => reserved::START,
            Some(t) => self.vocab.id_or_oov(t),
        }
    }

    pub fn step_output(&self, hidden: &DecoderState, prev: Option<&str>) -> Result<DecoderStepOutput> {
        decoder_step(self.model, &self.enc, hidden, self.prev_id(prev))
    }
}

impl StepModel for AcgDecoder<'_> {
    type Hidden = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        Ok(self.enc.initial_state())
    }

    fn step(&mut self, hidden: &DecoderState, prev: Option<&str>, top: usize) -> Result<(DecoderState, Vec<(String, f64)>)> {
        let out = self.step_output(hidden, prev)?;
        let c = top_candidates(&out.gen_dist, &out.copy_dist, out.p_copy, &self.enc.surface, self.vocab, top);
        Ok((out.state, c))
    }

    fn token_prob(&mut self, hidden: &DecoderState, prev: Option<&str>, token: &str) -> Result<(DecoderState, f64)> {
        let out = self.step_output(hidden, prev)?;
        let p = mixture_prob(&out.gen_dist, &out.copy_dist, out.p_copy, &self.enc.surface, self.vocab, token);
        Ok((out.state, p))
    }
}

/// Linearizes a context, keeping at most `max_tokens` linearized tokens.
pub fn prepare_context(queries: &[Query], vocab: &Vocabulary, max_tokens: usize) -> Result<LinearizedContext> {
    let kept = truncate_context(queries, max_tokens);
    if kept.is_empty() {
        return Err(AcgError::Empty("context has no queries".into()));
    }
    linearize(&kept, vocab)
}

/// Top `cfg.k` suggestions for a session context.
pub fn suggest(model: &AcgModel, vocab: &Vocabulary, context: &LinearizedContext, cfg: &DecodeConfig) -> Result<Vec<Suggestion>> {
    let mut dec = AcgDecoder::new(model, vocab, context)?;
    suggest_k(&mut dec, cfg)
}

/// Probability and log probability of `candidate` (terminator appended).
pub fn score(model: &AcgModel, vocab: &Vocabulary, context: &LinearizedContext, candidate: &[String]) -> Result<(f64, f64)> {
    let mut dec = AcgDecoder::new(model, vocab, context)?;
    score_query(&mut dec, candidate)
}

/// Attention weights and switch values along a teacher-forced `tokens` sequence.
pub fn attention_trace(
    model: &AcgModel,
    vocab: &Vocabulary,
    context: &LinearizedContext,
    tokens: &[String],
) -> Result<Vec<AttentionStep>> {
    let dec = AcgDecoder::new(model, vocab, context)?;
    let mut state = dec.enc.initial_state();
    let mut prev: Option<&str> = None;
    let mut out = Vec::with_capacity(tokens.len());
    for (t, tok) in tokens.iter().enumerate() {
        let step = dec.step_output(&state, prev)?;
        out.push(AttentionStep {
            step: t,
            token: tok.clone(),
            p_copy: step.p_copy,
            source: context.surface.clone(),
            weights: step.attention,
        });
        state = step.state;
        prev = Some(tok);
    }
    Ok(out)
}

/// Per-token mixture negative log likelihood of an example's target.
pub fn example_nll(model: &AcgModel, vocab: &Vocabulary, example: &TrainingExample) -> Result<(f64, usize)> {
    let mut g = Graph::new(&model.store);
    let steps = teacher_forced_graph(&mut g, model, example, Heads::ALL, None)?;
    let n = example.context.len();
    let mut nll = 0.0;
    for (st, tok) in steps.iter().zip(&example.target) {
        let gen = g.value(st.gen.expect("generator head"));
        let (copy, pc) = match (st.copy, st.p_copy) {
            (Some(c), Some(p)) => (g.value(c).to_vec(), g.scalar(p)),
            _ => {
                let mut c = vec![0.0; n + 1];
                c[0] = 1.0;
                (c, 0.0)
            }
        };
        let p = mixture_prob(gen, &copy, pc, &example.context.surface, vocab, tok);
        nll -= p.ln();
    }
    if !nll.is_finite() {
        return Err(AcgError::NonFinite("example likelihood".into()));
    }
    Ok((nll, steps.len()))
}

pub(crate) fn is_terminator(tok: &str) -> bool {
    tok == SEP_TOKEN
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::derive_targets;
    use crate::model::ModelConfig;

    fn q(s: &str) -> Query {
        s.split(' ').map(String::from).collect()
    }

    fn setup(copy: bool) -> (AcgModel, Vocabulary, LinearizedContext) {
        let v = Vocabulary::from_tokens(["bob", "dylan", "photo", "forever", "young", "bio"]).unwrap();
        let mut cfg = ModelConfig::tiny(v.len(), 4);
        cfg.init_seed = 11;
        cfg.copy_enabled = copy;
        let m = AcgModel::new(cfg).unwrap();
        let c = linearize(&[q("bob dylan"), q("forever young zimmerman")], &v).unwrap();
        (m, v, c)
    }

    #[test]
    fn step_outputs_are_distributions() {
        let (m, v, c) = setup(true);
        let enc = EncodedContext::new(&m, &c).unwrap();
        let out = decoder_step(&m, &enc, &enc.initial_state(), reserved::START).unwrap();
        assert!((out.gen_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.copy_dist.len(), c.len() + 1);
        assert!((out.copy_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.p_copy > 0.0 && out.p_copy < 1.0);
        assert_eq!(out.state.t, 1);
        let mix = fuse(&out, &c.surface, &v);
        assert!((mix.total() - 1.0).abs() < 1e-12);
        assert!(mix.get("zimmerman").unwrap().generated == 0.0);
        assert!(mix.get("<oov>").is_none() && mix.get("<unk>").is_none());
    }

    #[test]
    fn zero_switch_weights_give_even_odds() {
        let (mut m, _, c) = setup(true);
        let sw = m.layout.switch;
        m.store.value_mut(sw).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let enc = EncodedContext::new(&m, &c).unwrap();
        let out = decoder_step(&m, &enc, &enc.initial_state(), reserved::START).unwrap();
        assert_eq!(out.p_copy, 0.5);
    }

    #[test]
    fn fuse_hand_mixture() {
        let v = Vocabulary::from_tokens(["dylan", "bob"]).unwrap();
        let mut gen = vec![0.0; v.len()];
        gen[v.get("dylan").unwrap()] = 0.25;
        gen[v.get("bob").unwrap()] = 0.75;
        let surface: Vec<String> = vec!["dylan".into(), "</q>".into()];
        let mix = fuse_parts(&gen, &[0.5, 0.5, 0.0], 0.6, &surface, &v);
        assert!((mix.get("dylan").unwrap().prob() - 0.4).abs() < 1e-12);
        assert!((mix.get("bob").unwrap().prob() - 0.3).abs() < 1e-12);
        assert!((mix.residual - 0.3).abs() < 1e-12);
        assert!((mix.total() - 1.0).abs() < 1e-12);
        assert!((mixture_prob(&gen, &[0.5, 0.5, 0.0], 0.6, &surface, &v, "dylan") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn repeated_source_tokens_are_marginalized() {
        let v = Vocabulary::from_tokens(["x"]).unwrap();
        let gen = vec![1.0 / v.len() as f64; v.len()];
        let surface: Vec<String> = vec!["rare".into(), "x".into(), "rare".into()];
        let copy = [0.7, 0.1, 0.0, 0.2];
        let mix = fuse_parts(&gen, &copy, 1.0, &surface, &v);
        assert!((mix.get("rare").unwrap().prob() - 0.3).abs() < 1e-12);
        assert_eq!(mixture_prob(&gen, &copy, 1.0, &surface, &v, "never"), 0.0);
        let fb = mixture_prob(&gen, &copy, 0.5, &surface, &v, "never");
        assert!((fb - 0.5 / v.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn top_candidates_agree_with_fuse() {
        let (m, v, c) = setup(true);
        let enc = EncodedContext::new(&m, &c).unwrap();
        let out = decoder_step(&m, &enc, &enc.initial_state(), reserved::START).unwrap();
        let mix = fuse(&out, &c.surface, &v);
        let mut all: Vec<(String, f64)> = mix.entries.iter().map(|e| (e.token.clone(), e.prob())).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let top = top_candidates(&out.gen_dist, &out.copy_dist, out.p_copy, &c.surface, &v, 3);
        assert_eq!(top.len(), 3);
        for (a, b) in top.iter().zip(&all) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn disabled_copy_head_generates_only() {
        let (m, v, c) = setup(false);
        let enc = EncodedContext::new(&m, &c).unwrap();
        let out = decoder_step(&m, &enc, &enc.initial_state(), reserved::START).unwrap();
        assert_eq!(out.p_copy, 0.0);
        let mix = fuse(&out, &c.surface, &v);
        assert_eq!(mix.get("zimmerman").unwrap().prob(), 0.0);
    }

    #[test]
    fn teacher_forcing_matches_stepwise_decoding() {
        let (m, v, c) = setup(true);
        let ex = derive_targets(c.clone(), &q("bob zimmerman"), &v);
        let (nll, steps) = example_nll(&m, &v, &ex).unwrap();
        assert_eq!(steps, 3);
        let (p, logp) = score(&m, &v, &c, &q("bob zimmerman")).unwrap();
        assert!((nll + logp).abs() < 1e-9);
        assert!((p.ln() - logp).abs() < 1e-9);
    }

    #[test]
    fn trace_has_one_entry_per_token() {
        let (m, v, c) = setup(true);
        let toks = vec!["bob".to_string(), "</q>".to_string()];
        let tr = attention_trace(&m, &v, &c, &toks).unwrap();
        assert_eq!(tr.len(), 2);
        for s in &tr {
            assert_eq!(s.weights.word.len(), c.len());
            assert_eq!(s.weights.query.len(), 2);
            assert!((s.weights.combined.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_state_width_is_rejected() {
        let (m, _, c) = setup(true);
        let enc = EncodedContext::new(&m, &c).unwrap();
        let bad = DecoderState { s: vec![0.0; 3], t: 0 };
        assert!(matches!(decoder_step(&m, &enc, &bad, reserved::START), Err(AcgError::Dimension { .. })));
    }
}
