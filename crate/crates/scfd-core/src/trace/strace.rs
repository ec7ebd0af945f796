//! Strace text parser for the common single-process line shapes:
//!
//! ```text
//! 1391781976.966971 open("/etc/passwd", O_RDONLY) = 3
//! read(3,  <unfinished ...>
//! <... read resumed> "", 4096) = 0
//! --- SIGALRM {si_signo=SIGALRM, ...} ---
//! #REGION BEGIN
//! ```
//!
//! Unfinished calls are counted once, at the `resumed` line. An optional
//! leading fractional-seconds timestamp (strace -ttt) is parsed but is
//! informational only. Region markers are the magic comment lines
//! `#REGION BEGIN` / `#REGION END`.

use super::{TraceError, TraceEvent};

pub(super) fn parse_line(line: &str, lineno: usize) -> Result<Option<TraceEvent>, TraceError> {
    let s = line.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if s == "#REGION BEGIN" {
        return Ok(Some(TraceEvent::RegionBegin { ts: None }));
    }
    if s == "#REGION END" {
        return Ok(Some(TraceEvent::RegionEnd { ts: None }));
    }
    if s.starts_with("---") && s.ends_with("---") {
        return Ok(None); // signal delivery line
    }

    let (ts, rest) = split_timestamp(s);

    if let Some(r) = rest.strip_prefix("<...") {
        // "<... name resumed> args) = ret" — the completion of an
        // earlier unfinished call; count it here.
        let r = r.trim_start();
        let name: String = r
            .chars()
            .take_while(|c| is_ident_char(*c))
            .collect();
        let tail = &r[name.len()..];
        if name.is_empty() || !tail.trim_start().starts_with("resumed>") {
            return Err(TraceError::MalformedLine(lineno));
        }
        return Ok(Some(TraceEvent::Call { name, ts }));
    }

    let name: String = rest.chars().take_while(|c| is_ident_char(*c)).collect();
    if name.is_empty() || name.chars().next().unwrap().is_ascii_digit() {
        return Err(TraceError::MalformedLine(lineno));
    }
    let after = &rest[name.len()..];
    if !after.starts_with('(') {
        return Err(TraceError::MalformedLine(lineno));
    }
    if after.trim_end().ends_with("<unfinished ...>") {
        // Counted at the matching resumed line.
        return Ok(None);
    }
    // Require a ") = ret" tail; the return value may carry errno text
    // with its own parentheses, so match the last ") = ".
    match after.rfind(") = ") {
        Some(pos) if !after[pos + 4..].trim().is_empty() => {
            Ok(Some(TraceEvent::Call { name, ts }))
        }
        _ => Err(TraceError::MalformedLine(lineno)),
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

// strace -ttt prefixes lines with fractional epoch seconds.
fn split_timestamp(s: &str) -> (Option<f64>, &str) {
    if !s.starts_with(|c: char| c.is_ascii_digit()) {
        return (None, s);
    }
    match s.split_once(' ') {
        Some((head, rest)) => match head.parse::<f64>() {
            Ok(v) if v >= 0.0 => (Some(v), rest.trim_start()),
            _ => (None, s),
        },
        None => (None, s),
    }
}
