use serde::Serialize;

use super::is_terminator;
use crate::error::{AcgError, Result};

/// A left-to-right token model that beam search and scoring can drive.
pub trait StepModel {
    type Hidden: Clone;

    fn start(&mut self) -> Result<Self::Hidden>;

    /// Advances past `prev` (`None` at the first step) and returns at least
    /// the `top` most probable next tokens, sorted by probability descending
    /// then token ascending.
    fn step(&mut self, hidden: &Self::Hidden, prev: Option<&str>, top: usize) -> Result<(Self::Hidden, Vec<(String, f64)>)>;

    /// Probability of emitting `token` next.
    fn token_prob(&mut self, hidden: &Self::Hidden, prev: Option<&str>, token: &str) -> Result<(Self::Hidden, f64)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Maximum tokens per suggestion, terminator included.
    pub max_len: usize,
    /// Number of suggestions to decode along the best path.
    pub k: usize,
    /// Rank by mean per-token log probability instead of the total.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 4,
            max_len: 10,
            k: 1,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_len == 0 || self.k == 0 {
            return Err(AcgError::InvalidArgument("beam, max_len and k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis<H> {
    pub tokens: Vec<String>,
    pub token_log_probs: Vec<f64>,
    pub log_prob: f64,
    pub finished: bool,
    pub hidden: H,
    terminators: usize,
    since_terminator: usize,
}

impl<H> Hypothesis<H> {
    fn rank_score(&self, normalize: bool) -> f64 {
        if normalize && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub tokens: Vec<String>,
    pub log_prob: f64,
}

/// Beam search that ends a hypothesis at its `cfg.k`-th terminator or when a
/// suggestion reaches `cfg.max_len` tokens. Finished and live hypotheses
/// compete for the `cfg.beam` slots; ties break on the token sequence.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis<M::Hidden>>> {
    cfg.validate()?;
    let start = model.start()?;
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        token_log_probs: Vec::new(),
        log_prob: 0.0,
        finished: false,
        hidden: start,
        terminators: 0,
        since_terminator: 0,
    }];
    while beam.iter().any(|h| !h.finished) {
        let mut pool = Vec::with_capacity(beam.len() * (cfg.beam + 1));
        for h in beam {
            if h.finished {
                pool.push(h);
                continue;
            }
            let prev = h.tokens.last().map(String::as_str);
            let (next, cands) = model.step(&h.hidden, prev, cfg.beam)?;
            for (tok, p) in cands.into_iter().take(cfg.beam) {
                if p <= 0.0 {
                    continue;
                }
                let lp = p.ln();
                let mut n = Hypothesis {
                    tokens: h.tokens.clone(),
                    token_log_probs: h.token_log_probs.clone(),
                    log_prob: h.log_prob + lp,
                    finished: false,
                    hidden: next.clone(),
                    terminators: h.terminators,
                    since_terminator: h.since_terminator + 1,
                };
                if is_terminator(&tok) {
                    n.terminators += 1;
                    n.since_terminator = 0;
                }
                n.finished = n.terminators >= cfg.k || n.since_terminator >= cfg.max_len;
                n.tokens.push(tok);
                n.token_log_probs.push(lp);
                pool.push(n);
            }
        }
        if pool.is_empty() {
            return Err(AcgError::NonFinite("beam search found no token with positive probability".into()));
        }
        pool.sort_by(|a, b| {
            b.rank_score(cfg.length_normalize)
                .total_cmp(&a.rank_score(cfg.length_normalize))
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        pool.truncate(cfg.beam);
        beam = pool;
    }
    Ok(beam)
}

/// Splits the best hypothesis into its suggestions, in generation order.
pub fn suggest_k<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Vec<Suggestion>> {
    let best = beam_search(model, cfg)?.into_iter().next().expect("beam keeps at least one hypothesis");
    let mut out = Vec::new();
    let mut cur = Suggestion {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    for (tok, lp) in best.tokens.into_iter().zip(best.token_log_probs) {
        cur.log_prob += lp;
        if is_terminator(&tok) {
            out.push(std::mem::replace(
                &mut cur,
                Suggestion {
                    tokens: Vec::new(),
                    log_prob: 0.0,
                },
            ));
        } else {
            cur.tokens.push(tok);
        }
    }
    if !cur.tokens.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Teacher-forced probability of `candidate` followed by the terminator.
pub fn score_query<M: StepModel>(model: &mut M, candidate: &[String]) -> Result<(f64, f64)> {
    if candidate.is_empty() {
        return Err(AcgError::Empty("candidate query has no tokens".into()));
    }
    let mut seq: Vec<&str> = candidate.iter().map(String::as_str).collect();
    if !is_terminator(seq[seq.len() - 1]) {
        seq.push(super::SEP_TOKEN);
    }
    let mut hidden = model.start()?;
    let mut prev: Option<&str> = None;
    let mut logp = 0.0;
    for tok in seq {
        let (h, p) = model.token_prob(&hidden, prev, tok)?;
        logp += p.ln();
        hidden = h;
        prev = Some(tok);
    }
    Ok((logp.exp(), logp))
}
