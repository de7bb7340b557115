//! Query-log ingestion: normalization, session segmentation, vocabulary,
//! context linearization and per-step training targets.

pub mod io;
pub mod noise;
pub mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AcgError, Result};

/// A normalized query: non-empty list of lowercase alphanumeric tokens.
pub type Query = Vec<String>;

/// Idle time (seconds) that closes a session.
pub const SESSION_GAP_SECS: i64 = 30 * 60;

/// Lowercases, replaces every non-alphanumeric character with a space and
/// splits on whitespace. An empty result marks a droppable record.
pub fn normalize_query(raw: &str) -> Query {
    let cleaned: String = raw
        .chars()
        .flat_map(|c| c.to_lowercase())
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLogRecord {
    pub user_id: String,
    pub query_text: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub queries: Vec<Query>,
    pub timestamps: Vec<i64>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.queries.iter().map(Vec::len).sum()
    }
}

/// Splits one user's time-ordered records into sessions. A gap of at least
/// 30 minutes starts a new session. Records whose query normalizes to nothing
/// are dropped before segmentation.
pub fn segment_sessions(records: &[RawLogRecord]) -> Result<Vec<Session>> {
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(AcgError::Unsorted(i + 1));
    }
    let mut sessions: Vec<Session> = Vec::new();
    let mut last_ts: Option<i64> = None;
    for r in records {
        let q = normalize_query(&r.query_text);
        if q.is_empty() {
            continue;
        }
        let new_session = match last_ts {
            None => true,
            Some(prev) => r.timestamp - prev >= SESSION_GAP_SECS,
        };
        if new_session {
            sessions.push(Session {
                user_id: r.user_id.clone(),
                queries: Vec::new(),
                timestamps: Vec::new(),
            });
        }
        let s = sessions.last_mut().expect("session opened above");
        s.queries.push(q);
        s.timestamps.push(r.timestamp);
        last_ts = Some(r.timestamp);
    }
    Ok(sessions)
}

/// Groups a whole log by user, sorts each user's records by time (stable) and
/// segments them. Sessions come back ordered by start time, then user id.
pub fn sessions_from_log(records: Vec<RawLogRecord>) -> Result<Vec<Session>> {
    let mut by_user: HashMap<String, Vec<RawLogRecord>> = HashMap::new();
    for r in records {
        by_user.entry(r.user_id.clone()).or_default().push(r);
    }
    let mut users: Vec<String> = by_user.keys().cloned().collect();
    users.sort();
    let mut out = Vec::new();
    for u in users {
        let mut recs = by_user.remove(&u).expect("user key present");
        recs.sort_by_key(|r| r.timestamp);
        out.extend(segment_sessions(&recs)?);
    }
    out.sort_by(|a, b| a.timestamps[0].cmp(&b.timestamps[0]).then_with(|| a.user_id.cmp(&b.user_id)));
    Ok(out)
}

/// Time-ordered split into (train, l2r, test) by the given fractions of the
/// session count; the remainder after train and l2r goes to test.
pub fn split_sessions(sessions: &[Session], train: f64, l2r: f64) -> (Vec<Session>, Vec<Session>, Vec<Session>) {
    let n = sessions.len();
    let a = ((n as f64) * train).round() as usize;
    let b = (a + ((n as f64) * l2r).round() as usize).min(n);
    (sessions[..a].to_vec(), sessions[a..b].to_vec(), sessions[b..].to_vec())
}

/// Reserved token ids. Every vocabulary starts with this block.
pub mod reserved {
    pub const PAD: usize = 0;
    /// Query separator and terminator.
    pub const SEP: usize = 1;
    /// Generator target for words outside the vocabulary.
    pub const OOV: usize = 2;
    /// Copier target for words absent from the source.
    pub const UNK: usize = 3;
    /// Previous-token input at the first decode step.
    pub const START: usize = 4;
    pub const COUNT: usize = 5;
    pub const TOKENS: [&str; COUNT] = ["<pad>", "</q>", "<oov>", "<unk>", "<s>"];
}

/// Surface form of the separator token.
pub const SEP_TOKEN: &str = "</q>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit non-reserved tokens, in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = reserved::TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(AcgError::InvalidArgument(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Vocabulary { tokens: all, ids })
    }

    /// Total size including the reserved block.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or the `<oov>` id.
    pub fn id_or_oov(&self, token: &str) -> usize {
        self.get(token).unwrap_or(reserved::OOV)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Non-reserved tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[reserved::COUNT..]
    }

    /// Whether a token with this id may be emitted by decoding.
    pub fn is_emittable(id: usize) -> bool {
        !matches!(id, reserved::PAD | reserved::OOV | reserved::UNK | reserved::START)
    }
}

/// Keeps the `size - reserved` most frequent tokens of all queries in
/// `sessions`, ordered by count descending then token ascending.
pub fn build_vocabulary(sessions: &[Session], size: usize) -> Result<Vocabulary> {
    if size <= reserved::COUNT {
        return Err(AcgError::InvalidArgument(format!(
            "vocabulary size {size} must exceed the {} reserved tokens",
            reserved::COUNT
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sessions {
        for q in &s.queries {
            for t in q {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(AcgError::Empty("no tokens to build a vocabulary from".into()));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().filter(|(t, _)| !reserved::TOKENS.contains(t)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(size - reserved::COUNT);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Flattened session context: every query followed by `</q>`.
///
/// Positions are 0-based here. In copy distributions index 0 is the `<unk>`
/// slot and source position `i` sits at index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedContext {
    pub token_ids: Vec<usize>,
    /// Strictly increasing positions of the separators; one per query.
    pub separators: Vec<usize>,
    /// Surface string of every position (`</q>` at separators).
    pub surface: Vec<String>,
}

impl LinearizedContext {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_queries(&self) -> usize {
        self.separators.len()
    }

    /// Index of the query owning each position (a separator belongs to the
    /// query it closes).
    pub fn owners(&self) -> Vec<usize> {
        owner_map(&self.separators, self.len())
    }

    /// Source positions (0-based) whose surface equals `token`.
    pub fn positions_of(&self, token: &str) -> Vec<usize> {
        self.surface
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_str() == token)
            .map(|(i, _)| i)
            .collect()
    }

    /// Token sequence with separators removed, split back into queries.
    pub fn queries(&self) -> Vec<Query> {
        let mut out = Vec::new();
        let mut start = 0;
        for &k in &self.separators {
            out.push(self.surface[start..k].to_vec());
            start = k + 1;
        }
        out
    }
}

/// For each position `i < n`, the smallest `j` with `i <= separators[j]`.
pub fn owner_map(separators: &[usize], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        while j + 1 < separators.len() && i > separators[j] {
            j += 1;
        }
        out.push(j);
    }
    out
}

pub fn linearize(queries: &[Query], vocab: &Vocabulary) -> Result<LinearizedContext> {
    if queries.is_empty() {
        return Err(AcgError::Empty("cannot linearize an empty context".into()));
    }
    let mut ctx = LinearizedContext {
        token_ids: Vec::new(),
        separators: Vec::new(),
        surface: Vec::new(),
    };
    for q in queries {
        for t in q {
            ctx.token_ids.push(vocab.id_or_oov(t));
            ctx.surface.push(t.clone());
        }
        ctx.separators.push(ctx.token_ids.len());
        ctx.token_ids.push(reserved::SEP);
        ctx.surface.push(SEP_TOKEN.to_string());
    }
    Ok(ctx)
}

/// Drops the oldest queries until the linearized length fits `max_tokens`.
/// A single oversized query keeps only its last tokens.
pub fn truncate_context(queries: &[Query], max_tokens: usize) -> Vec<Query> {
    let mut kept: Vec<Query> = Vec::new();
    let mut used = 0;
    for q in queries.iter().rev() {
        let need = q.len() + 1;
        if used + need <= max_tokens {
            kept.push(q.clone());
            used += need;
        } else {
            if kept.is_empty() && max_tokens >= 2 {
                kept.push(q[q.len() - (max_tokens - 1)..].to_vec());
            }
            break;
        }
    }
    kept.reverse();
    kept
}

/// One source/target pair with per-step supervision for the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: LinearizedContext,
    /// Target surface tokens, terminated by `</q>`.
    pub target: Vec<String>,
    /// Vocabulary id per step (`<oov>` when absent).
    pub generator_targets: Vec<usize>,
    /// Copy-distribution indices (source position + 1) per step; empty means
    /// the `<unk>` slot.
    pub copier_targets: Vec<Vec<usize>>,
    /// 1.0 = copy, 0.0 = generate.
    pub switch_targets: Vec<f64>,
}

impl TrainingExample {
    pub fn target_length(&self) -> usize {
        self.target.len()
    }
}

/// Switch target from the four rules: copy whenever the word is in the
/// source, otherwise generate.
pub fn switch_target(copier_is_unk: bool, generator_is_oov: bool) -> f64 {
    match (copier_is_unk, generator_is_oov) {
        (true, false) => 0.0,
        (false, true) => 1.0,
        (true, true) => 0.0,
        (false, false) => 1.0,
    }
}

pub fn derive_targets(context: LinearizedContext, target_query: &[String], vocab: &Vocabulary) -> TrainingExample {
    let mut target: Vec<String> = target_query.to_vec();
    target.push(SEP_TOKEN.to_string());
    let mut generator_targets = Vec::with_capacity(target.len());
    let mut copier_targets = Vec::with_capacity(target.len());
    let mut switch_targets = Vec::with_capacity(target.len());
    for w in &target {
        let gen = vocab.id_or_oov(w);
        let copy: Vec<usize> = context.positions_of(w).into_iter().map(|p| p + 1).collect();
        switch_targets.push(switch_target(copy.is_empty(), gen == reserved::OOV));
        generator_targets.push(gen);
        copier_targets.push(copy);
    }
    TrainingExample {
        context,
        target,
        generator_targets,
        copier_targets,
        switch_targets,
    }
}

/// Which (context, next query) pairs a session contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Every proper prefix predicts the query that follows it.
    AllPrefixes,
    /// Only the full context predicts the final query.
    LastOnly,
}

/// Training examples from sessions with at least two queries.
pub fn training_examples(
    sessions: &[Session],
    vocab: &Vocabulary,
    mode: PairMode,
    max_context_tokens: usize,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for s in sessions.iter().filter(|s| s.len() >= 2) {
        let first = match mode {
            PairMode::AllPrefixes => 1,
            PairMode::LastOnly => s.len() - 1,
        };
        for split in first..s.len() {
            let ctx = truncate_context(&s.queries[..split], max_context_tokens);
            if ctx.is_empty() {
                continue;
            }
            let lin = linearize(&ctx, vocab)?;
            out.push(derive_targets(lin, &s.queries[split], vocab));
        }
    }
    Ok(out)
}
