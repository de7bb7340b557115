//! Text formats for logs, sessions and vocabularies.
//!
//! * log: `user_id<TAB>query<TAB>timestamp` (ISO-8601), optional header line
//! * sessions: one session per line, queries joined by `<TAB>`, tokens by a space
//! * session meta (sidecar): `user_id<TAB>ts1,ts2,…` aligned with the session file
//! * vocabulary: `#` comment block describing the reserved ids, then one token
//!   per line; line `k` (0-based, comments excluded) has id `k + 5`

use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime};

use super::{reserved, Query, RawLogRecord, Session, Vocabulary};
use crate::error::{AcgError, Result};

/// Parses `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS` or RFC 3339 into Unix seconds.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<RawLogRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let loc = format!("log line {}", i + 1);
        if fields.len() < 3 {
            if i == 0 {
                continue;
            }
            return Err(AcgError::format(loc, "expected user_id, query and timestamp"));
        }
        match parse_timestamp(fields[2]) {
            Some(ts) => out.push(RawLogRecord {
                user_id: fields[0].to_string(),
                query_text: fields[1].to_string(),
                timestamp: ts,
            }),
            None if i == 0 => continue,
            None => return Err(AcgError::format(loc, format!("unparseable timestamp {:?}", fields[2]))),
        }
    }
    Ok(out)
}

pub fn write_sessions<W: Write>(mut out: W, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        let line: Vec<String> = s.queries.iter().map(|q| q.join(" ")).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    Ok(())
}

pub fn write_session_meta<W: Write>(mut out: W, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        let ts: Vec<String> = s.timestamps.iter().map(|t| t.to_string()).collect();
        writeln!(out, "{}\t{}", s.user_id, ts.join(","))?;
    }
    Ok(())
}

fn parse_session_line(line: &str, loc: &str) -> Result<Vec<Query>> {
    let mut queries = Vec::new();
    for q in line.split('\t') {
        let toks: Query = q.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
        if toks.is_empty() {
            return Err(AcgError::format(loc, "empty query in session"));
        }
        queries.push(toks);
    }
    Ok(queries)
}

/// Reads a session file. Without a meta sidecar, user ids are empty and
/// timestamps are the query indices.
pub fn read_sessions<R: BufRead>(input: R) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let queries = parse_session_line(&line, &format!("session line {}", i + 1))?;
        let timestamps = (0..queries.len() as i64).collect();
        out.push(Session {
            user_id: String::new(),
            queries,
            timestamps,
        });
    }
    Ok(out)
}

/// Attaches user ids and timestamps from a meta sidecar.
pub fn apply_session_meta<R: BufRead>(sessions: &mut [Session], meta: R) -> Result<()> {
    let lines: Vec<String> = meta.lines().collect::<std::io::Result<_>>()?;
    let lines: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != sessions.len() {
        return Err(AcgError::format(
            "session meta",
            format!("{} meta lines for {} sessions", lines.len(), sessions.len()),
        ));
    }
    for (i, (s, line)) in sessions.iter_mut().zip(lines).enumerate() {
        let loc = format!("session meta line {}", i + 1);
        let (user, ts) = line
            .split_once('\t')
            .ok_or_else(|| AcgError::format(&loc, "expected user_id<TAB>timestamps"))?;
        let ts: Vec<i64> = ts
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| AcgError::format(&loc, "bad timestamp list"))?;
        if ts.len() != s.len() {
            return Err(AcgError::format(&loc, "timestamp count does not match query count"));
        }
        s.user_id = user.to_string();
        s.timestamps = ts;
    }
    Ok(())
}

pub fn write_vocabulary<W: Write>(mut out: W, vocab: &Vocabulary) -> Result<()> {
    writeln!(out, "# acg vocabulary: {} entries including {} reserved", vocab.len(), reserved::COUNT)?;
    for (id, tok) in reserved::TOKENS.iter().enumerate() {
        writeln!(out, "# reserved {id} {tok}")?;
    }
    writeln!(out, "# token on line k below has id k + {}", reserved::COUNT)?;
    for t in vocab.regular_tokens() {
        writeln!(out, "{t}")?;
    }
    Ok(())
}

pub fn read_vocabulary<R: BufRead>(input: R) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') {
            continue;
        }
        let t = line.trim_end_matches('\r');
        if t.is_empty() || t.contains(char::is_whitespace) {
            return Err(AcgError::format(format!("vocabulary line {}", i + 1), "expected one token"));
        }
        tokens.push(t.to_string());
    }
    Vocabulary::from_tokens(tokens).map_err(|e| AcgError::format("vocabulary", e.to_string()))
}
