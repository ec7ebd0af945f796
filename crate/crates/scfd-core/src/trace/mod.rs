//! Traces, execution regions, syscall alphabets and frequency vectors,
//! plus parsers for the two supported on-disk trace formats.

mod jsonl;
mod strace;

pub use jsonl::write_traces_jsonl;

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("unbalanced region marker at line {0}")]
    UnbalancedRegion(usize),
    #[error("unknown syscall {0:?}")]
    UnknownSyscall(String),
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate syscall name {0:?}")]
    DuplicateName(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered registry of syscall type names; defines the coordinates of
/// every frequency vector. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallAlphabet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SyscallAlphabet {
    pub fn from_names<I, S>(names: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = SyscallAlphabet {
            names: Vec::new(),
            index: HashMap::new(),
        };
        for n in names {
            let n = n.into();
            if out.index.contains_key(&n) {
                return Err(TraceError::DuplicateName(n));
            }
            out.index.insert(n.clone(), out.names.len());
            out.names.push(n);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Call,
    RegionBegin,
    RegionEnd,
}

/// A single event on the wire. Region markers never carry a name; call
/// events always do.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Call { name: String, ts: Option<f64> },
    RegionBegin { ts: Option<f64> },
    RegionEnd { ts: Option<f64> },
}

impl TraceEvent {
    pub fn call(name: &str) -> Self {
        TraceEvent::Call {
            name: name.to_string(),
            ts: None,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            TraceEvent::Call { .. } => EventKind::Call,
            TraceEvent::RegionBegin { .. } => EventKind::RegionBegin,
            TraceEvent::RegionEnd { .. } => EventKind::RegionEnd,
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            TraceEvent::Call { name, .. } => Some(name),
            _ => None,
        }
    }
}

/// How a region was delimited in the source stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framing {
    /// Begin..End pair.
    Closed,
    /// Begin seen, End never arrived (the watchdog case).
    Unterminated,
    /// Calls observed outside any region; any syscall here is suspect.
    OutOfRegion,
}

/// The calls of exactly one execution region. Region markers are framing,
/// not events, so `events` holds only `Call`s.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub source_id: String,
    pub events: Vec<TraceEvent>,
    pub framing: Framing,
}

impl ExecutionTrace {
    pub fn new(source_id: impl Into<String>, events: Vec<TraceEvent>, framing: Framing) -> Self {
        debug_assert!(events.iter().all(|e| e.kind() == EventKind::Call));
        ExecutionTrace {
            source_id: source_id.into(),
            events,
            framing,
        }
    }

    pub fn call_count(&self) -> usize {
        self.events.len()
    }

    pub fn call_names(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| e.name())
    }
}

/// One execution's syscall frequency vector over an alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scfd {
    pub counts: Vec<u32>,
}

impl Scfd {
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnUnknown {
    /// Unknown names are an error; detection mode.
    Reject,
    /// Unknown names extend the alphabet; training mode.
    Extend,
}

/// Count the calls of a trace over an alphabet. Under `Extend` the returned
/// alphabet may carry extra names (appended in first-seen order); under
/// `Reject` it is always identical to the input.
pub fn build_scfd(
    trace: &ExecutionTrace,
    alphabet: &SyscallAlphabet,
    on_unknown: OnUnknown,
) -> Result<(Scfd, SyscallAlphabet), TraceError> {
    let mut alphabet = alphabet.clone();
    let mut counts = vec![0u32; alphabet.len()];
    for ev in &trace.events {
        let name = match ev.name() {
            Some(n) => n,
            None => continue,
        };
        let idx = match alphabet.index_of(name) {
            Some(i) => i,
            None => match on_unknown {
                OnUnknown::Reject => return Err(TraceError::UnknownSyscall(name.to_string())),
                OnUnknown::Extend => {
                    let i = alphabet.names.len();
                    alphabet.index.insert(name.to_string(), i);
                    alphabet.names.push(name.to_string());
                    counts.push(0);
                    i
                }
            },
        };
        counts[idx] += 1;
    }
    Ok((Scfd { counts }, alphabet))
}

/// Training set: alphabet plus one frequency vector per execution.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub alphabet: SyscallAlphabet,
    pub rows: Vec<Scfd>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.alphabet.len()
    }
}

/// Build a training set from traces: the alphabet is the lexicographically
/// sorted union of all names seen, so profiles do not depend on trace
/// arrival order.
pub fn load_training_set(traces: &[ExecutionTrace]) -> Result<TrainingSet, TraceError> {
    if traces.is_empty() {
        return Err(TraceError::EmptyInput);
    }
    let mut names: Vec<&str> = traces
        .iter()
        .flat_map(|t| t.call_names())
        .collect();
    names.sort_unstable();
    names.dedup();
    let alphabet = SyscallAlphabet::from_names(names)?;
    let mut rows = Vec::with_capacity(traces.len());
    for t in traces {
        let (scfd, _) = build_scfd(t, &alphabet, OnUnknown::Reject)?;
        rows.push(scfd);
    }
    Ok(TrainingSet { alphabet, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Jsonl,
    StraceText,
}

/// Parse an event stream into execution traces, one per region.
///
/// Calls outside any region are grouped into synthetic out-of-region
/// traces per contiguous run. A Begin while a region is open, or end of
/// input inside a region, closes the open region as `Unterminated` (the
/// software analog of the watchdog firing after a non-returning call).
/// An End without a matching Begin is an error.
pub fn parse_event_log<R: BufRead>(
    reader: R,
    format: TraceFormat,
) -> Result<Vec<ExecutionTrace>, TraceError> {
    let mut traces: Vec<ExecutionTrace> = Vec::new();
    let mut region_no = 0usize;
    let mut stray_no = 0usize;
    // (events, true) = inside a region; (events, false) = stray run.
    let mut current: Vec<TraceEvent> = Vec::new();
    let mut in_region = false;

    let flush = |events: &mut Vec<TraceEvent>,
                     in_region: bool,
                     framing: Framing,
                     region_no: &mut usize,
                     stray_no: &mut usize,
                     traces: &mut Vec<ExecutionTrace>| {
        if in_region {
            traces.push(ExecutionTrace::new(
                format!("region-{}", *region_no),
                std::mem::take(events),
                framing,
            ));
            *region_no += 1;
        } else if !events.is_empty() {
            traces.push(ExecutionTrace::new(
                format!("out-of-region-{}", *stray_no),
                std::mem::take(events),
                Framing::OutOfRegion,
            ));
            *stray_no += 1;
        } else {
            events.clear();
        }
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let event = match format {
            TraceFormat::Jsonl => jsonl::parse_line(&line, lineno)?,
            TraceFormat::StraceText => strace::parse_line(&line, lineno)?,
        };
        let event = match event {
            Some(e) => e,
            None => continue,
        };
        match event.kind() {
            EventKind::RegionBegin => {
                let framing = if in_region {
                    Framing::Unterminated
                } else {
                    Framing::Closed // stray run framing is fixed in flush
                };
                flush(
                    &mut current,
                    in_region,
                    framing,
                    &mut region_no,
                    &mut stray_no,
                    &mut traces,
                );
                in_region = true;
            }
            EventKind::RegionEnd => {
                if !in_region {
                    return Err(TraceError::UnbalancedRegion(lineno));
                }
                flush(
                    &mut current,
                    true,
                    Framing::Closed,
                    &mut region_no,
                    &mut stray_no,
                    &mut traces,
                );
                in_region = false;
            }
            EventKind::Call => current.push(event),
        }
    }
    flush(
        &mut current,
        in_region,
        Framing::Unterminated,
        &mut region_no,
        &mut stray_no,
        &mut traces,
    );
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn jsonl(s: &str) -> Result<Vec<ExecutionTrace>, TraceError> {
        parse_event_log(Cursor::new(s), TraceFormat::Jsonl)
    }

    #[test]
    fn three_calls_in_one_region() {
        let input = r#"{"kind":"begin"}
{"kind":"call","name":"read"}
{"kind":"call","name":"read"}
{"kind":"call","name":"write"}
{"kind":"end"}
"#;
        let traces = jsonl(input).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].events.len(), 3);
        assert_eq!(traces[0].framing, Framing::Closed);
        assert_eq!(traces[0].source_id, "region-0");
    }

    #[test]
    fn empty_input_gives_no_traces() {
        assert!(jsonl("").unwrap().is_empty());
    }

    #[test]
    fn end_before_begin_is_unbalanced() {
        let err = jsonl("{\"kind\":\"end\"}\n").unwrap_err();
        assert!(matches!(err, TraceError::UnbalancedRegion(1)));
    }

    #[test]
    fn open_region_at_eof_is_unterminated() {
        let input = "{\"kind\":\"begin\"}\n{\"kind\":\"call\",\"name\":\"execve\"}\n";
        let traces = jsonl(input).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].framing, Framing::Unterminated);
    }

    #[test]
    fn begin_inside_region_closes_previous() {
        let input = r#"{"kind":"begin"}
{"kind":"call","name":"execve"}
{"kind":"begin"}
{"kind":"call","name":"read"}
{"kind":"end"}
"#;
        let traces = jsonl(input).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].framing, Framing::Unterminated);
        assert_eq!(traces[1].framing, Framing::Closed);
    }

    #[test]
    fn stray_calls_form_out_of_region_traces() {
        let input = r#"{"kind":"call","name":"open"}
{"kind":"call","name":"close"}
{"kind":"begin"}
{"kind":"call","name":"read"}
{"kind":"end"}
{"kind":"call","name":"mmap"}
"#;
        let traces = jsonl(input).unwrap();
        assert_eq!(traces.len(), 3);
        assert_eq!(traces[0].framing, Framing::OutOfRegion);
        assert_eq!(traces[0].events.len(), 2);
        assert_eq!(traces[1].framing, Framing::Closed);
        assert_eq!(traces[2].framing, Framing::OutOfRegion);
        assert_eq!(traces[2].source_id, "out-of-region-1");
    }

    #[test]
    fn parsing_is_order_preserving() {
        let mut input = String::new();
        for i in 0..5 {
            input.push_str("{\"kind\":\"begin\"}\n");
            for _ in 0..=i {
                input.push_str("{\"kind\":\"call\",\"name\":\"read\"}\n");
            }
            input.push_str("{\"kind\":\"end\"}\n");
        }
        let traces = jsonl(&input).unwrap();
        assert_eq!(traces.len(), 5);
        for (i, t) in traces.iter().enumerate() {
            assert_eq!(t.events.len(), i + 1);
            assert_eq!(t.source_id, format!("region-{i}"));
        }
    }

    #[test]
    fn build_scfd_counts_and_rejects() {
        let alphabet = SyscallAlphabet::from_names(["read", "write"]).unwrap();
        let trace = ExecutionTrace::new(
            "t",
            vec![
                TraceEvent::call("read"),
                TraceEvent::call("read"),
                TraceEvent::call("write"),
            ],
            Framing::Closed,
        );
        let (scfd, alpha2) = build_scfd(&trace, &alphabet, OnUnknown::Reject).unwrap();
        assert_eq!(scfd.counts, vec![2, 1]);
        assert_eq!(alpha2, alphabet);

        let bad = ExecutionTrace::new(
            "t",
            vec![TraceEvent::call("execve")],
            Framing::Closed,
        );
        let err = build_scfd(&bad, &alphabet, OnUnknown::Reject).unwrap_err();
        assert!(matches!(err, TraceError::UnknownSyscall(n) if n == "execve"));

        let (scfd, extended) = build_scfd(&bad, &alphabet, OnUnknown::Extend).unwrap();
        assert_eq!(extended.len(), 3);
        assert_eq!(scfd.counts, vec![0, 0, 1]);
        assert_eq!(extended.index_of("execve"), Some(2));
    }

    #[test]
    fn empty_trace_gives_zero_vector() {
        let alphabet = SyscallAlphabet::from_names(["read"]).unwrap();
        let trace = ExecutionTrace::new("t", vec![], Framing::Closed);
        let (scfd, _) = build_scfd(&trace, &alphabet, OnUnknown::Reject).unwrap();
        assert_eq!(scfd.counts, vec![0]);
    }

    #[test]
    fn training_set_alphabet_is_sorted_union() {
        let t1 = ExecutionTrace::new("a", vec![TraceEvent::call("read")], Framing::Closed);
        let t2 = ExecutionTrace::new("b", vec![TraceEvent::call("write")], Framing::Closed);
        let ts = load_training_set(&[t1, t2]).unwrap();
        assert_eq!(ts.alphabet.names(), &["read".to_string(), "write".to_string()]);
        assert_eq!(ts.rows[0].counts, vec![1, 0]);
        assert_eq!(ts.rows[1].counts, vec![0, 1]);

        assert!(matches!(
            load_training_set(&[]),
            Err(TraceError::EmptyInput)
        ));
    }

    #[test]
    fn single_trace_training_set() {
        let t = ExecutionTrace::new("a", vec![TraceEvent::call("read")], Framing::Closed);
        let ts = load_training_set(&[t]).unwrap();
        assert_eq!(ts.len(), 1);
    }

    #[test]
    fn scfd_total_equals_call_count() {
        let trace = ExecutionTrace::new(
            "t",
            vec![
                TraceEvent::call("a"),
                TraceEvent::call("b"),
                TraceEvent::call("a"),
            ],
            Framing::Closed,
        );
        let ts = load_training_set(std::slice::from_ref(&trace)).unwrap();
        assert_eq!(ts.rows[0].total(), trace.call_count() as u64);
    }

    #[test]
    fn duplicate_alphabet_names_rejected() {
        assert!(matches!(
            SyscallAlphabet::from_names(["read", "read"]),
            Err(TraceError::DuplicateName(_))
        ));
    }
}
