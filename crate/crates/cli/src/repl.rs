use std::io::{self, BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use acg::corpus::{normalize_query, Query};
use acg::corpus::SEP_TOKEN;
use acg::decoder::{beam_search, prepare_context, AcgDecoder, DecodeConfig};
use acg::AcgError;

use crate::commands::{decode_config, load_model, CliResult};
use crate::ReplArgs;

/// Idle time after which the next query starts a new session.
pub const SESSION_GAP_SECS: i64 = 30 * 60;

#[derive(Debug, PartialEq, Eq)]
pub enum ReplLine {
    NewSession,
    Quit,
    Query(Query),
    Blank,
}

pub fn parse_line(line: &str) -> ReplLine {
    match line.trim() {
        ":new" => ReplLine::NewSession,
        ":quit" | ":q" => ReplLine::Quit,
        text => {
            let q = normalize_query(text);
            if q.is_empty() {
                ReplLine::Blank
            } else {
                ReplLine::Query(q)
            }
        }
    }
}

/// The running session typed so far.
#[derive(Debug, Default)]
pub struct ReplSession {
    queries: Vec<Query>,
    last_seen: Option<i64>,
}

impl ReplSession {
    pub fn reset(&mut self) {
        self.queries.clear();
        self.last_seen = None;
    }

    /// Appends a query issued at `now` (Unix seconds). Returns true when the
    /// gap since the previous query closed the old session first.
    pub fn push(&mut self, query: Query, now: i64) -> bool {
        let expired = self.last_seen.is_some_and(|t| now - t >= SESSION_GAP_SECS);
        if expired {
            self.queries.clear();
        }
        self.queries.push(query);
        self.last_seen = Some(now);
        expired
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

pub fn run(a: ReplArgs) -> CliResult {
    let (model, vocab) = load_model(&a.model)?;
    let base = decode_config(&a.decode, 1);
    let cfg = DecodeConfig {
        beam: base.beam.max(a.k),
        ..base
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    writeln!(out, "type a query; :new starts a new session, :quit leaves").map_err(AcgError::from)?;
    out.flush().map_err(AcgError::from)?;
    let mut session = ReplSession::default();
    for line in stdin.lock().lines() {
        let line = line.map_err(AcgError::from)?;
        match parse_line(&line) {
            ReplLine::Quit => break,
            ReplLine::Blank => continue,
            ReplLine::NewSession => {
                session.reset();
                writeln!(out, "(new session)").map_err(AcgError::from)?;
            }
            ReplLine::Query(q) => {
                if session.push(q, now_secs()) {
                    writeln!(out, "(session expired; starting a new one)").map_err(AcgError::from)?;
                }
                let ctx = prepare_context(session.queries(), &vocab, a.decode.max_context_tokens)?;
                let hyps = beam_search(&mut AcgDecoder::new(&model, &vocab, &ctx)?, &cfg)?;
                for (rank, h) in hyps.iter().take(a.k).enumerate() {
                    let words: Vec<&str> = h.tokens.iter().map(String::as_str).filter(|t| *t != SEP_TOKEN).collect();
                    writeln!(out, "  {}. {}\t{:.3}", rank + 1, words.join(" "), h.log_prob).map_err(AcgError::from)?;
                }
            }
        }
        out.flush().map_err(AcgError::from)?;
    }
    Ok(())
}
