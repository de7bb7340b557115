//! Position-independent error rate, vector-extrema similarity, RBO and MRR.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{AcgError, Result};

/// `(|G∖T| + |T∖G|) / |T|` with multiset differences.
pub fn per(generated: &[String], target: &[String]) -> Result<f64> {
    if target.is_empty() {
        return Err(AcgError::Empty("PER needs a non-empty target".into()));
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in generated {
        *counts.entry(t).or_default() += 1;
    }
    for t in target {
        *counts.entry(t).or_default() -= 1;
    }
    let edits: i64 = counts.values().map(|c| c.abs()).sum();
    Ok(edits as f64 / target.len() as f64)
}

/// Word vectors of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(AcgError::dim(format!("embedding of {word}"), self.dim, vector.len()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(AcgError::NonFinite(format!("embedding of {word}")));
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Reads `count dim` followed by `word v1 … vd` lines.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| AcgError::format("embeddings", "missing header"))??;
        let mut h = header.split_whitespace();
        let (count, dim) = match (h.next().map(str::parse::<usize>), h.next().map(str::parse::<usize>)) {
            (Some(Ok(c)), Some(Ok(d))) => (c, d),
            _ => return Err(AcgError::format("embeddings line 1", "expected `count dim`")),
        };
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("embeddings line {}", i + 2);
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line has a first field");
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| AcgError::format(&loc, "bad number"))?;
            table.insert(word, vector).map_err(|e| AcgError::format(&loc, e.to_string()))?;
        }
        if table.len() != count {
            return Err(AcgError::format("embeddings", format!("header says {count} words, found {}", table.len())));
        }
        Ok(table)
    }
}

/// Per dimension, the value of largest magnitude among the in-table words
/// (the first one wins ties, then the positive one). `None` when no word is
/// in the table.
pub fn extrema_embedding(query: &[String], table: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for w in query {
        let Some(v) = table.get(w) else { continue };
        match &mut out {
            None => out = Some(v.to_vec()),
            Some(o) => {
                for (a, b) in o.iter_mut().zip(v) {
                    if b.abs() > a.abs() || (b.abs() == a.abs() && *b > *a) {
                        *a = *b;
                    }
                }
            }
        }
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine of the two extrema vectors; `None` when either is missing or zero.
pub fn sim_emb(generated: &[String], target: &[String], table: &EmbeddingTable) -> Option<f64> {
    let g = extrema_embedding(generated, table)?;
    let t = extrema_embedding(target, table)?;
    cosine(&g, &t)
}

/// Truncated rank-biased overlap `(1−p) Σ_{d=1..depth} p^{d−1} |A_d ∩ B_d| / d`.
/// With `extrapolate`, the overlap at `depth` is assumed to continue, adding
/// `p^depth · |A_k ∩ B_k| / k` for `k = depth`.
pub fn rbo<T: Eq + std::hash::Hash + Clone>(a: &[T], b: &[T], p: f64, depth: usize, extrapolate: bool) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AcgError::InvalidArgument(format!("RBO persistence {p} outside (0, 1)")));
    }
    if depth == 0 {
        return Err(AcgError::InvalidArgument("RBO depth must be at least 1".into()));
    }
    let mut seen_a = std::collections::HashSet::new();
    let mut seen_b = std::collections::HashSet::new();
    let mut overlap = 0usize;
    let mut sum = 0.0;
    let mut weight = 1.0;
    let mut agreement = 0.0;
    for d in 1..=depth {
        let (x, y) = (a.get(d - 1), b.get(d - 1));
        if x.is_some() && x == y {
            overlap += 1;
        } else {
            overlap += usize::from(x.is_some_and(|x| seen_b.contains(x)));
            overlap += usize::from(y.is_some_and(|y| seen_a.contains(y)));
        }
        if let Some(x) = x {
            seen_a.insert(x.clone());
        }
        if let Some(y) = y {
            seen_b.insert(y.clone());
        }
        agreement = overlap as f64 / d as f64;
        sum += weight * agreement;
        weight *= p;
    }
    let mut value = (1.0 - p) * sum;
    if extrapolate {
        value += weight * agreement;
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Mean of `1/rank` of the relevant item (0 when absent).
pub fn mrr<T: PartialEq>(instances: &[(Vec<T>, T)]) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let total: f64 = instances
        .iter()
        .map(|(ranked, relevant)| {
            ranked
                .iter()
                .position(|c| c == relevant)
                .map(|r| 1.0 / (r + 1) as f64)
                .unwrap_or(0.0)
        })
        .sum();
    total / instances.len() as f64
}
