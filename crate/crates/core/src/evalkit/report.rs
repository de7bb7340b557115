//! Per-instance scoring, aggregation and session-length buckets.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{per, sim_emb, EmbeddingTable};
use super::mps::CooccurrenceTable;
use super::retrieval::Index;
use super::simret::{sim_ret_suite, RetrievalConfig, SimRet};
use crate::corpus::{Query, Session, Vocabulary};
use crate::decoder::{prepare_context, score, suggest, DecodeConfig};
use crate::error::{AcgError, Result};
use crate::model::AcgModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Short,
    Medium,
    Long,
}

impl Bucket {
    /// Sessions of 2 queries are short, 3–4 medium, longer ones long.
    pub fn of(session_len: usize) -> Option<Bucket> {
        match session_len {
            0 | 1 => None,
            2 => Some(Bucket::Short),
            3 | 4 => Some(Bucket::Medium),
            _ => Some(Bucket::Long),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Short => "short",
            Bucket::Medium => "medium",
            Bucket::Long => "long",
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = ["per", "sim_emb", "sim_ret", "sim_ret_plus", "sim_ret_plus_plus", "mrr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSelection {
    pub per: bool,
    pub sim_emb: bool,
    pub sim_ret: bool,
    pub mrr: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            per: true,
            sim_emb: true,
            sim_ret: true,
            mrr: true,
        }
    }
}

impl MetricSelection {
    pub fn none() -> Self {
        MetricSelection {
            per: false,
            sim_emb: false,
            sim_ret: false,
            mrr: false,
        }
    }

    /// Accepts `per`, `sim_emb`, `sim_ret` (all three retrieval variants) and `mrr`.
    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut sel = MetricSelection::none();
        for n in names {
            match n.as_ref() {
                "per" => sel.per = true,
                "sim_emb" => sel.sim_emb = true,
                "sim_ret" => sel.sim_ret = true,
                "mrr" => sel.mrr = true,
                other => return Err(AcgError::InvalidArgument(format!("unknown metric {other}"))),
            }
        }
        Ok(sel)
    }

    fn enabled(&self, name: &str) -> bool {
        match name {
            "per" => self.per,
            "sim_emb" => self.sim_emb,
            "mrr" => self.mrr,
            _ => self.sim_ret,
        }
    }
}

/// One generated suggestion with everything its metrics need.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalInstance {
    pub session_len: Option<usize>,
    pub generated: Query,
    pub target: Query,
    /// Suggestion from the first half of the session and the remaining queries.
    pub half: Option<(Query, Vec<Query>)>,
    /// Ranked candidates for MRR.
    pub ranked: Option<Vec<Query>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceResult {
    pub session_len: Option<usize>,
    pub bucket: Option<Bucket>,
    pub generated: String,
    pub target: String,
    pub per: Option<f64>,
    pub sim_emb: Option<f64>,
    pub sim_ret: Option<f64>,
    pub sim_ret_plus: Option<f64>,
    pub sim_ret_plus_plus: Option<f64>,
    pub mrr: Option<f64>,
}

impl InstanceResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "per" => self.per,
            "sim_emb" => self.sim_emb,
            "sim_ret" => self.sim_ret,
            "sim_ret_plus" => self.sim_ret_plus,
            "sim_ret_plus_plus" => self.sim_ret_plus_plus,
            "mrr" => self.mrr,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub count: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct BucketReport {
    pub count: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EvalReport {
    pub seed: Option<u64>,
    pub noise: Option<String>,
    pub count: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub buckets: BTreeMap<String, BucketReport>,
    pub instances: Vec<InstanceResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AcgError::InvalidArgument(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalResources<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub index: Option<&'a Index>,
    pub retrieval: RetrievalConfig,
}

fn summarize<'a>(rows: impl Iterator<Item = &'a InstanceResult> + Clone, sel: &MetricSelection) -> BTreeMap<String, MetricSummary> {
    let mut out = BTreeMap::new();
    for name in METRIC_NAMES {
        if !sel.enabled(name) {
            continue;
        }
        let mut s = MetricSummary::default();
        let mut sum = 0.0;
        for r in rows.clone() {
            match r.metric(name) {
                Some(v) => {
                    sum += v;
                    s.count += 1;
                }
                None => s.skipped += 1,
            }
        }
        s.mean = (s.count > 0).then(|| sum / s.count as f64);
        out.insert(name.to_string(), s);
    }
    out
}

fn score_instance(inst: &EvalInstance, res: &EvalResources<'_>, sel: &MetricSelection) -> Result<InstanceResult> {
    let mut r = InstanceResult {
        session_len: inst.session_len,
        bucket: inst.session_len.and_then(Bucket::of),
        generated: inst.generated.join(" "),
        target: inst.target.join(" "),
        per: None,
        sim_emb: None,
        sim_ret: None,
        sim_ret_plus: None,
        sim_ret_plus_plus: None,
        mrr: None,
    };
    if sel.per && !inst.target.is_empty() {
        r.per = Some(per(&inst.generated, &inst.target)?);
    }
    if sel.sim_emb {
        r.sim_emb = res.embeddings.and_then(|t| sim_emb(&inst.generated, &inst.target, t));
    }
    if sel.sim_ret {
        if let Some(index) = res.index {
            let half = inst.half.as_ref().map(|(g, tail)| (g.as_slice(), tail.as_slice()));
            let SimRet {
                sim_ret,
                sim_ret_plus,
                sim_ret_plus_plus,
            } = sim_ret_suite(&inst.generated, &inst.target, half, index, &res.retrieval)?;
            r.sim_ret = sim_ret;
            r.sim_ret_plus = sim_ret_plus;
            r.sim_ret_plus_plus = sim_ret_plus_plus;
        }
    }
    if sel.mrr {
        r.mrr = inst.ranked.as_ref().map(|ranked| {
            ranked
                .iter()
                .position(|c| *c == inst.target)
                .map(|k| 1.0 / (k + 1) as f64)
                .unwrap_or(0.0)
        });
    }
    Ok(r)
}

/// Scores every instance and aggregates overall and per bucket. A selected
/// metric that cannot be computed for an instance counts as skipped.
pub fn evaluate_instances(instances: &[EvalInstance], res: &EvalResources<'_>, sel: &MetricSelection) -> Result<EvalReport> {
    let rows: Vec<InstanceResult> = instances
        .par_iter()
        .map(|i| score_instance(i, res, sel))
        .collect::<Result<_>>()?;
    let mut buckets = BTreeMap::new();
    for b in [Bucket::Short, Bucket::Medium, Bucket::Long] {
        let members = rows.iter().filter(move |r| r.bucket == Some(b));
        buckets.insert(
            b.as_str().to_string(),
            BucketReport {
                count: members.clone().count(),
                metrics: summarize(members, sel),
            },
        );
    }
    Ok(EvalReport {
        seed: None,
        noise: None,
        count: rows.len(),
        metrics: summarize(rows.iter(), sel),
        buckets,
        instances: rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub decode: DecodeConfig,
    pub max_context_tokens: usize,
    pub mps_k: usize,
    pub with_half: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            decode: DecodeConfig::default(),
            max_context_tokens: 50,
            mps_k: 20,
            with_half: true,
        }
    }
}

fn top_suggestion(model: &AcgModel, vocab: &Vocabulary, context: &[Query], cfg: &HarnessConfig) -> Result<Query> {
    let ctx = prepare_context(context, vocab, cfg.max_context_tokens)?;
    let decode = DecodeConfig { k: 1, ..cfg.decode };
    Ok(suggest(model, vocab, &ctx, &decode)?
        .into_iter()
        .next()
        .map(|s| s.tokens)
        .unwrap_or_default())
}

/// Model ranking of the anchor's co-occurrence candidates, log probability
/// descending then lexicographic.
pub fn rerank_candidates(
    model: &AcgModel,
    vocab: &Vocabulary,
    context: &[Query],
    candidates: Vec<Query>,
    max_context_tokens: usize,
) -> Result<Vec<Query>> {
    let ctx = prepare_context(context, vocab, max_context_tokens)?;
    let mut scored = candidates
        .into_iter()
        .map(|c| Ok((score(model, vocab, &ctx, &c)?.1, c)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// Evaluation instances for every session of at least two queries: the last
/// query is the target and the others the context.
pub fn build_instances(
    model: &AcgModel,
    vocab: &Vocabulary,
    sessions: &[Session],
    mps: Option<&CooccurrenceTable>,
    cfg: &HarnessConfig,
) -> Result<Vec<EvalInstance>> {
    sessions
        .par_iter()
        .filter(|s| s.len() >= 2)
        .map(|s| {
            let l = s.len();
            let context = &s.queries[..l - 1];
            let target = s.queries[l - 1].clone();
            let generated = top_suggestion(model, vocab, context, cfg)?;
            let half = if cfg.with_half && l > 2 {
                let g = top_suggestion(model, vocab, &s.queries[..l / 2], cfg)?;
                Some((g, s.queries[l / 2..].to_vec()))
            } else {
                None
            };
            let ranked = match mps {
                Some(table) => {
                    let cands = table.candidates(&context[context.len() - 1], cfg.mps_k);
                    Some(rerank_candidates(model, vocab, context, cands, cfg.max_context_tokens)?)
                }
                None => None,
            };
            Ok(EvalInstance {
                session_len: Some(l),
                generated,
                target,
                half,
                ranked,
            })
        })
        .collect()
}
