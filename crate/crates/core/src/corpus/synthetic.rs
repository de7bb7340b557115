//! Seeded synthetic session generators for smoke runs, benchmarks and the
//! functional checks of the copy mechanism.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Query, Session};

fn successor(i: usize, n: usize) -> usize {
    (i + 7) % n
}

/// Sessions about one topic whose queries pair the topic with a modifier; each
/// query keeps the topic and swaps in a fixed successor of the previous
/// modifier, so every prefix determines the next query. Tokens: `t00..`
/// topics and `m00..` modifiers.
pub fn reformulation_sessions(n: usize, n_topics: usize, n_modifiers: usize, seed: u64) -> Vec<Session> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let topic = format!("t{:02}", rng.gen_range(0..n_topics));
        let context_len = rng.gen_range(1..=3);
        let mut queries: Vec<Query> = Vec::new();
        let mut m = rng.gen_range(0..n_modifiers);
        for _ in 0..context_len {
            queries.push(vec![topic.clone(), format!("m{m:02}")]);
            m = successor(m, n_modifiers);
        }
        queries.push(vec![topic, format!("m{m:02}")]);
        out.push(Session {
            user_id: format!("s{i}"),
            timestamps: (0..queries.len() as i64).map(|t| i as i64 * 10_000 + t * 60).collect(),
            queries,
        });
    }
    out
}

/// Sessions built around one rare token per session (`<prefix><number>`,
/// never repeated across sessions). Every context query holds the rare token
/// and a common modifier `c00..` chained by the successor rule; the next query
/// repeats the rare token followed by the successor of the last modifier.
pub fn copy_sessions(n: usize, n_modifiers: usize, rare_prefix: &str, seed: u64) -> Vec<Session> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..n as u32).map(|i| i * 7919 % 1_000_003).collect();
    ids.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for (i, id) in ids.into_iter().enumerate() {
        let rare = format!("{rare_prefix}{id}");
        let context_len = rng.gen_range(1..=2);
        let mut queries: Vec<Query> = Vec::new();
        let mut m = rng.gen_range(0..n_modifiers);
        for _ in 0..context_len {
            let tok = format!("c{m:02}");
            if rng.gen_bool(0.5) {
                queries.push(vec![rare.clone(), tok]);
            } else {
                queries.push(vec![tok, rare.clone()]);
            }
            m = successor(m, n_modifiers);
        }
        queries.push(vec![rare, format!("c{m:02}")]);
        out.push(Session {
            user_id: format!("u{}", i % 97),
            timestamps: (0..queries.len() as i64).map(|t| i as i64 * 10_000 + t * 60).collect(),
            queries,
        });
    }
    out
}
