//! Jsonl trace format: one object per line, UTF-8, LF endings.
//!
//! `{"kind":"call","name":"read","ts":1.25}` — `name` only on calls,
//! `ts` optional everywhere.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExecutionTrace, Framing, TraceError, TraceEvent};

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts: Option<f64>,
}

pub(super) fn parse_line(line: &str, lineno: usize) -> Result<Option<TraceEvent>, TraceError> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let parsed: Line =
        serde_json::from_str(trimmed).map_err(|_| TraceError::MalformedLine(lineno))?;
    match parsed.kind.as_str() {
        "call" => match parsed.name {
            Some(name) if !name.is_empty() => Ok(Some(TraceEvent::Call {
                name,
                ts: parsed.ts,
            })),
            _ => Err(TraceError::MalformedLine(lineno)),
        },
        "begin" => Ok(Some(TraceEvent::RegionBegin { ts: parsed.ts })),
        "end" => Ok(Some(TraceEvent::RegionEnd { ts: parsed.ts })),
        _ => Err(TraceError::MalformedLine(lineno)),
    }
}

fn write_event<W: Write>(w: &mut W, kind: &str, name: Option<&str>, ts: Option<f64>) -> std::io::Result<()> {
    let line = Line {
        kind: kind.to_string(),
        name: name.map(|s| s.to_string()),
        ts,
    };
    // serde_json writes stable field order for structs.
    writeln!(w, "{}", serde_json::to_string(&line).expect("jsonl encode"))
}

/// Serialize traces back to Jsonl. Closed regions get both markers,
/// unterminated ones only the Begin, out-of-region runs none; re-parsing
/// the output reproduces the same event sequences and framing.
pub fn write_traces_jsonl<W: Write>(w: &mut W, traces: &[ExecutionTrace]) -> std::io::Result<()> {
    for t in traces {
        match t.framing {
            Framing::Closed | Framing::Unterminated => write_event(w, "begin", None, None)?,
            Framing::OutOfRegion => {}
        }
        for ev in &t.events {
            if let TraceEvent::Call { name, ts } = ev {
                write_event(w, "call", Some(name), *ts)?;
            }
        }
        if t.framing == Framing::Closed {
            write_event(w, "end", None, None)?;
        }
    }
    Ok(())
}
