//! Most-popular-suggestion candidates from in-session co-occurrence.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{Query, Session};

/// Number of training sessions in which two distinct queries appear together.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceTable {
    counts: HashMap<Query, HashMap<Query, u64>>,
}

impl CooccurrenceTable {
    pub fn build(sessions: &[Session]) -> Self {
        let mut counts: HashMap<Query, HashMap<Query, u64>> = HashMap::new();
        for s in sessions {
            let distinct: BTreeSet<&Query> = s.queries.iter().collect();
            for a in &distinct {
                for b in &distinct {
                    if a != b {
                        *counts.entry((*a).clone()).or_default().entry((*b).clone()).or_default() += 1;
                    }
                }
            }
        }
        CooccurrenceTable { counts }
    }

    pub fn count(&self, anchor: &[String], other: &[String]) -> u64 {
        self.counts.get(anchor).and_then(|m| m.get(other)).copied().unwrap_or(0)
    }

    /// Up to `k` co-occurring queries, count descending then lexicographic.
    pub fn candidates(&self, anchor: &[String], k: usize) -> Vec<Query> {
        let Some(m) = self.counts.get(anchor) else { return Vec::new() };
        let mut v: Vec<(&Query, u64)> = m.iter().map(|(q, c)| (q, *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().take(k).map(|(q, _)| q.clone()).collect()
    }
}

pub fn mps_candidates(table: &CooccurrenceTable, anchor: &[String], k: usize) -> Vec<Query> {
    table.candidates(anchor, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(qs: &[&str]) -> Session {
        Session {
            user_id: "u".into(),
            queries: qs.iter().map(|q| vec![q.to_string()]).collect(),
            timestamps: (0..qs.len() as i64).collect(),
        }
    }

    #[test]
    fn counting_oracle() {
        let t = CooccurrenceTable::build(&[session(&["a", "b"]), session(&["a", "b"]), session(&["a", "c"])]);
        let a = vec!["a".to_string()];
        assert_eq!(t.candidates(&a, 20), vec![vec!["b".to_string()], vec!["c".to_string()]]);
        assert_eq!(t.candidates(&a, 1), vec![vec!["b".to_string()]]);
        assert!(t.candidates(&["z".to_string()], 20).is_empty());
        assert_eq!(t.count(&a, &["b".to_string()]), 2);
    }

    #[test]
    fn repeats_within_a_session_count_once() {
        let t = CooccurrenceTable::build(&[session(&["a", "b", "a", "b"])]);
        assert_eq!(t.count(&["a".to_string()], &["b".to_string()]), 1);
        assert_eq!(t.count(&["a".to_string()], &["a".to_string()]), 0);
    }
}
