//! Session perturbations used by the robustness evaluation: inserting a
//! noise term, a noise query, or a whole session of the same user.
//!
//! Insertions never touch the final query of a multi-query session, so the
//! prediction target of an evaluation instance is preserved.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Query, Session};
use crate::error::{AcgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Term,
    Query,
    Session,
}

impl NoiseMode {
    pub fn parse(s: &str) -> Option<NoiseMode> {
        match s {
            "term" => Some(NoiseMode::Term),
            "query" => Some(NoiseMode::Query),
            "session" => Some(NoiseMode::Session),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Term => "term",
            NoiseMode::Query => "query",
            NoiseMode::Session => "session",
        }
    }
}

/// Common English function words excluded from the noise-term list.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having",
    "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
    "yourself", "yourselves",
];

/// Frequency-weighted noise lists and an optional donor-session pool.
#[derive(Debug, Clone, Default)]
pub struct NoiseResources {
    pub terms: Vec<(String, u64)>,
    pub queries: Vec<(Query, u64)>,
    /// Donor sessions for session noise; when `None` the perturbed sessions
    /// themselves are the pool.
    pub session_pool: Option<Vec<Session>>,
}

impl NoiseResources {
    /// The 200 most frequent non-stopword terms and the 100 most frequent
    /// queries of `sessions` (count descending, then lexicographic).
    pub fn from_sessions(sessions: &[Session]) -> Self {
        Self::from_sessions_with_sizes(sessions, 200, 100)
    }

    pub fn from_sessions_with_sizes(sessions: &[Session], n_terms: usize, n_queries: usize) -> Self {
        let mut terms: HashMap<&str, u64> = HashMap::new();
        let mut queries: HashMap<&Query, u64> = HashMap::new();
        for s in sessions {
            for q in &s.queries {
                *queries.entry(q).or_default() += 1;
                for t in q {
                    if !STOPWORDS.contains(&t.as_str()) {
                        *terms.entry(t.as_str()).or_default() += 1;
                    }
                }
            }
        }
        let mut terms: Vec<(String, u64)> = terms.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        terms.truncate(n_terms);
        let mut queries: Vec<(Query, u64)> = queries.into_iter().map(|(q, c)| (q.clone(), c)).collect();
        queries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        queries.truncate(n_queries);
        NoiseResources {
            terms,
            queries,
            session_pool: None,
        }
    }
}

/// Queries eligible for perturbation: all but the last of a multi-query session.
fn editable_queries(s: &Session) -> usize {
    if s.len() >= 2 {
        s.len() - 1
    } else {
        s.len()
    }
}

/// Inserts `term` into query `query` before token index `slot`.
pub fn insert_term(session: &mut Session, term: &str, query: usize, slot: usize) {
    session.queries[query].insert(slot, term.to_string());
}

/// Inserts `noise` as a new query at index `position`.
pub fn insert_query(session: &mut Session, noise: &Query, position: usize) {
    let ts = session.timestamps.get(position).or(session.timestamps.last()).copied().unwrap_or(0);
    session.queries.insert(position, noise.clone());
    session.timestamps.insert(position, ts);
}

/// Prepends every query of `donor`.
pub fn prepend_session(session: &mut Session, donor: &Session) {
    let ts = session.timestamps.first().copied().unwrap_or(0);
    let mut queries = donor.queries.clone();
    queries.append(&mut session.queries);
    session.queries = queries;
    let mut stamps = vec![ts; donor.len()];
    stamps.append(&mut session.timestamps);
    session.timestamps = stamps;
}

pub fn inject_noise(sessions: &[Session], mode: NoiseMode, seed: u64, resources: &NoiseResources) -> Result<Vec<Session>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sessions.to_vec();
    match mode {
        NoiseMode::Term => {
            if resources.terms.is_empty() {
                return Err(AcgError::MissingResource("noise term list".into()));
            }
            let weights = WeightedIndex::new(resources.terms.iter().map(|(_, c)| *c))
                .map_err(|e| AcgError::MissingResource(format!("noise term weights: {e}")))?;
            for s in out.iter_mut().filter(|s| !s.is_empty()) {
                let term = &resources.terms[weights.sample(&mut rng)].0;
                let q = rng.gen_range(0..editable_queries(s));
                let slot = rng.gen_range(0..=s.queries[q].len());
                insert_term(s, term, q, slot);
            }
        }
        NoiseMode::Query => {
            if resources.queries.is_empty() {
                return Err(AcgError::MissingResource("noise query list".into()));
            }
            let weights = WeightedIndex::new(resources.queries.iter().map(|(_, c)| *c))
                .map_err(|e| AcgError::MissingResource(format!("noise query weights: {e}")))?;
            for s in out.iter_mut() {
                let noise = &resources.queries[weights.sample(&mut rng)].0;
                let pos = rng.gen_range(0..=s.len().saturating_sub(1));
                insert_query(s, noise, pos);
            }
        }
        NoiseMode::Session => {
            let pool: &[Session] = resources.session_pool.as_deref().unwrap_or(sessions);
            let mut by_user: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, s) in pool.iter().enumerate() {
                by_user.entry(s.user_id.as_str()).or_default().push(i);
            }
            let own_pool = resources.session_pool.is_none();
            for (idx, s) in out.iter_mut().enumerate() {
                let donors: Vec<usize> = by_user
                    .get(s.user_id.as_str())
                    .map(|v| {
                        v.iter()
                            .copied()
                            .filter(|&d| if own_pool { d != idx } else { pool[d] != sessions[idx] })
                            .collect()
                    })
                    .unwrap_or_default();
                if donors.is_empty() {
                    continue;
                }
                let d = donors[rng.gen_range(0..donors.len())];
                prepend_session(s, &pool[d]);
            }
        }
    }
    Ok(out)
}
