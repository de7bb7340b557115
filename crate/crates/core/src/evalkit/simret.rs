//! Retrieval-based similarity: RBO between the generated query's ranking and
//! a reference ranking.

use std::collections::HashMap;

use super::metrics::rbo;
use super::retrieval::{retrieve, retrieve_weighted, rm3_expand, Index, RankedList, Rm3Params};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub mu: f64,
    pub depth: usize,
    pub rbo_p: f64,
    pub rbo_depth: usize,
    pub extrapolate: bool,
    pub rm3: Rm3Params,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            mu: 2500.0,
            depth: 100,
            rbo_p: 0.9,
            rbo_depth: 100,
            extrapolate: false,
            rm3: Rm3Params::default(),
        }
    }
}

/// `None` marks a skipped value (empty retrieval or no tail).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimRet {
    pub sim_ret: Option<f64>,
    pub sim_ret_plus: Option<f64>,
    pub sim_ret_plus_plus: Option<f64>,
}

/// Min-max normalizes each list to [0, 1] (all ones for a constant list),
/// sums scores per document and keeps the top `depth`.
pub fn fuse_lists(lists: &[RankedList], depth: usize) -> RankedList {
    let mut acc: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        let Some(max) = list.entries.iter().map(|x| x.1).reduce(f64::max) else { continue };
        let min = list.entries.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let range = max - min;
        for (d, s) in &list.entries {
            let v = if range > 0.0 { (s - min) / range } else { 1.0 };
            *acc.entry(d.as_str()).or_default() += v;
        }
    }
    let mut fused = RankedList::from_unsorted(acc.into_iter().map(|(d, s)| (d.to_string(), s)).collect());
    fused.entries.truncate(depth);
    fused
}

/// RBO evaluated to the depth of the longer list when both are shorter than
/// `rbo_depth`, so two identical lists score `1 − p^len`.
fn compare(a: &RankedList, b: &RankedList, cfg: &RetrievalConfig) -> Result<Option<f64>> {
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let depth = cfg.rbo_depth.min(a.len().max(b.len()));
    rbo(&a.ids(), &b.ids(), cfg.rbo_p, depth, cfg.extrapolate).map(Some)
}

/// `half` pairs the suggestion made from the first `⌊l/2⌋` queries with the
/// remaining `⌈l/2⌉`; it is needed only for `sim_ret⁺⁺`.
pub fn sim_ret_suite(
    generated: &[String],
    target: &[String],
    half: Option<(&[String], &[Vec<String>])>,
    index: &Index,
    cfg: &RetrievalConfig,
) -> Result<SimRet> {
    let gen_list = retrieve(index, generated, cfg.mu, cfg.depth)?;
    let target_list = retrieve(index, target, cfg.mu, cfg.depth)?;
    let expanded = rm3_expand(index, target, &Rm3Params { mu: cfg.mu, ..cfg.rm3 })?;
    let expanded_list = retrieve_weighted(index, &expanded, cfg.mu, cfg.depth)?;
    let mut out = SimRet {
        sim_ret: compare(&gen_list, &target_list, cfg)?,
        sim_ret_plus: compare(&gen_list, &expanded_list, cfg)?,
        sim_ret_plus_plus: None,
    };
    if let Some((gen_half, tail)) = half {
        let lists = tail
            .iter()
            .map(|q| retrieve(index, q, cfg.mu, cfg.depth))
            .collect::<Result<Vec<_>>>()?;
        if !tail.is_empty() && lists.iter().all(|l| !l.is_empty()) {
            let reference = fuse_lists(&lists, cfg.depth);
            let half_list = retrieve(index, gen_half, cfg.mu, cfg.depth)?;
            out.sim_ret_plus_plus = compare(&half_list, &reference, cfg)?;
        }
    }
    Ok(out)
}
