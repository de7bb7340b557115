//! A small in-memory retrieval engine: inverted index, Dirichlet-smoothed
//! query likelihood and RM3 expansion.

use std::collections::HashMap;
use std::io::BufRead;

use crate::corpus::normalize_query;
use crate::error::{AcgError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    doc_ids: Vec<String>,
    doc_len: Vec<u64>,
    /// Term id → (doc, tf), doc-ordered.
    postings: Vec<Vec<(u32, u32)>>,
    /// Doc → (term id, tf).
    doc_terms: Vec<Vec<(u32, u32)>>,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    collection_freq: Vec<u64>,
    collection_len: u64,
}

impl Index {
    pub fn build<I, S>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let mut idx = Index {
            doc_ids: Vec::new(),
            doc_len: Vec::new(),
            postings: Vec::new(),
            doc_terms: Vec::new(),
            terms: Vec::new(),
            term_ids: HashMap::new(),
            collection_freq: Vec::new(),
            collection_len: 0,
        };
        let mut seen = std::collections::HashSet::new();
        for (id, tokens) in docs {
            let id: String = id.into();
            if !seen.insert(id.clone()) {
                return Err(AcgError::InvalidArgument(format!("duplicate document id {id}")));
            }
            let doc = idx.doc_ids.len() as u32;
            let mut tf: HashMap<u32, u32> = HashMap::new();
            for t in &tokens {
                let tid = match idx.term_ids.get(t) {
                    Some(&x) => x,
                    None => {
                        let x = idx.terms.len() as u32;
                        idx.terms.push(t.clone());
                        idx.term_ids.insert(t.clone(), x);
                        idx.postings.push(Vec::new());
                        idx.collection_freq.push(0);
                        x
                    }
                };
                *tf.entry(tid).or_default() += 1;
            }
            let mut terms: Vec<(u32, u32)> = tf.into_iter().collect();
            terms.sort_unstable();
            for &(tid, f) in &terms {
                idx.postings[tid as usize].push((doc, f));
                idx.collection_freq[tid as usize] += f as u64;
            }
            idx.doc_ids.push(id);
            idx.doc_len.push(tokens.len() as u64);
            idx.collection_len += tokens.len() as u64;
            idx.doc_terms.push(terms);
        }
        Ok(idx)
    }

    /// Reads `doc_id<TAB>text` lines; text is normalized like queries.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut docs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| AcgError::format(format!("corpus line {}", i + 1), "expected doc_id<TAB>text"))?;
            docs.push((id.to_string(), normalize_query(text)));
        }
        Index::build(docs)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn collection_len(&self) -> u64 {
        self.collection_len
    }

    pub fn doc_len(&self, doc: usize) -> u64 {
        self.doc_len[doc]
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    /// `P(w|C)`; zero for unseen terms.
    pub fn collection_prob(&self, term: &str) -> f64 {
        match self.term_ids.get(term) {
            Some(&t) if self.collection_len > 0 => self.collection_freq[t as usize] as f64 / self.collection_len as f64,
            _ => 0.0,
        }
    }

    pub fn term_freq(&self, term: &str, doc: usize) -> u32 {
        self.term_ids
            .get(term)
            .and_then(|&t| {
                let p = &self.postings[t as usize];
                p.binary_search_by_key(&(doc as u32), |x| x.0).ok().map(|k| p[k].1)
            })
            .unwrap_or(0)
    }
}

/// `(doc id, score)` pairs, score descending then id ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn from_unsorted(mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedList { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(d, _)| d.as_str()).collect()
    }
}

/// Term weights of a (possibly expanded) query.
pub type WeightedQuery = Vec<(String, f64)>;

/// Maximum-likelihood query distribution.
pub fn query_distribution(query: &[String]) -> WeightedQuery {
    let mut counts: Vec<(String, f64)> = Vec::new();
    for t in query {
        match counts.iter_mut().find(|(w, _)| w == t) {
            Some(c) => c.1 += 1.0,
            None => counts.push((t.clone(), 1.0)),
        }
    }
    let n = query.len() as f64;
    counts.iter_mut().for_each(|c| c.1 /= n);
    counts
}

fn score_docs(index: &Index, query: &[(String, f64)], mu: f64) -> Vec<(usize, f64)> {
    let terms: Vec<(u32, f64, f64)> = query
        .iter()
        .filter_map(|(w, qw)| {
            let &t = index.term_ids.get(w)?;
            let pc = index.collection_freq[t as usize] as f64 / index.collection_len as f64;
            (pc > 0.0 && *qw > 0.0).then_some((t, *qw, pc))
        })
        .collect();
    let mut matched: Vec<usize> = terms
        .iter()
        .flat_map(|(t, _, _)| index.postings[*t as usize].iter().map(|(d, _)| *d as usize))
        .collect();
    matched.sort_unstable();
    matched.dedup();
    matched
        .into_iter()
        .map(|d| {
            let denom = (index.doc_len[d] as f64 + mu).ln();
            let s = terms
                .iter()
                .map(|&(t, qw, pc)| {
                    let p = &index.postings[t as usize];
                    let tf = p.binary_search_by_key(&(d as u32), |x| x.0).map(|k| p[k].1).unwrap_or(0);
                    qw * ((tf as f64 + mu * pc).ln() - denom)
                })
                .sum();
            (d, s)
        })
        .collect()
}

/// Dirichlet query likelihood over documents matching at least one term.
/// Terms absent from the collection are skipped.
pub fn retrieve_weighted(index: &Index, query: &[(String, f64)], mu: f64, depth: usize) -> Result<RankedList> {
    if mu <= 0.0 {
        return Err(AcgError::InvalidArgument(format!("Dirichlet mu {mu} must be positive")));
    }
    let scored = score_docs(index, query, mu);
    let mut list = RankedList::from_unsorted(scored.into_iter().map(|(d, s)| (index.doc_ids[d].clone(), s)).collect());
    list.entries.truncate(depth);
    Ok(list)
}

pub fn retrieve(index: &Index, query: &[String], mu: f64, depth: usize) -> Result<RankedList> {
    let counts: WeightedQuery = query_distribution(query)
        .into_iter()
        .map(|(w, p)| (w, p * query.len() as f64))
        .collect();
    retrieve_weighted(index, &counts, mu, depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rm3Params {
    pub fb_docs: usize,
    pub fb_terms: usize,
    /// Weight of the original query.
    pub lambda: f64,
    pub mu: f64,
}

impl Default for Rm3Params {
    fn default() -> Self {
        Rm3Params {
            fb_docs: 10,
            fb_terms: 10,
            lambda: 0.5,
            mu: 2500.0,
        }
    }
}

/// Relevance model over the top `fb_docs`: `Σ_D P(D|q) P(w|D)`, with
/// `P(D|q)` the normalized query likelihood and `P(w|D)` the document MLE,
/// truncated to `fb_terms` terms and renormalized.
pub fn relevance_model(index: &Index, query: &[String], params: &Rm3Params) -> Result<WeightedQuery> {
    let counts: WeightedQuery = query_distribution(query)
        .into_iter()
        .map(|(w, p)| (w, p * query.len() as f64))
        .collect();
    let mut scored = score_docs(index, &counts, params.mu);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| index.doc_ids[a.0].cmp(&index.doc_ids[b.0])));
    scored.truncate(params.fb_docs);
    if scored.is_empty() {
        return Ok(Vec::new());
    }
    let max = scored.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut rm: HashMap<u32, f64> = HashMap::new();
    for ((d, _), w) in scored.iter().zip(&weights) {
        let len = index.doc_len[*d] as f64;
        for &(t, tf) in &index.doc_terms[*d] {
            *rm.entry(t).or_default() += (w / z) * tf as f64 / len;
        }
    }
    let mut terms: WeightedQuery = rm.into_iter().map(|(t, p)| (index.terms[t as usize].clone(), p)).collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    terms.truncate(params.fb_terms);
    let z: f64 = terms.iter().map(|x| x.1).sum();
    terms.iter_mut().for_each(|x| x.1 /= z);
    Ok(terms)
}

/// `λ · P(w|q) + (1 − λ) · RM(w)`; the original distribution when the
/// initial retrieval is empty.
pub fn rm3_expand(index: &Index, query: &[String], params: &Rm3Params) -> Result<WeightedQuery> {
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(AcgError::InvalidArgument(format!("RM3 lambda {} outside [0, 1]", params.lambda)));
    }
    let original = query_distribution(query);
    let rm = relevance_model(index, query, params)?;
    if rm.is_empty() {
        return Ok(original);
    }
    let lam = params.lambda;
    let mut out: WeightedQuery = Vec::new();
    for (w, p) in &original {
        let r = rm.iter().find(|(t, _)| t == w).map(|x| x.1).unwrap_or(0.0);
        out.push((w.clone(), lam * p + (1.0 - lam) * r));
    }
    for (w, r) in &rm {
        if !original.iter().any(|(t, _)| t == w) {
            out.push((w.clone(), (1.0 - lam) * r));
        }
    }
    out.retain(|x| x.1 > 0.0);
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}
