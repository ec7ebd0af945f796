//! Deterministic, seedable generator of camera-upload traces and the four
//! attack variants used for end-to-end evaluation.
//!
//! Every execution cycles through: camera read, JPEG encode (no
//! syscalls), file write, an optional FTP upload, and an HTTP log post,
//! with fixed background calls. The per-stage call counts below are
//! calibration constants, frozen by golden tests:
//!
//! - camera: `open, read x 91, close` (91 = ceil(raw / 28672)), then
//!   `stat, stat`;
//! - file write: `open, fstat, mmap, write x w, close, munmap, write`
//!   with w = ceil(jpeg / write_chunk);
//! - FTP (probability 1 - ftp_skip_prob): control connect and commands,
//!   `stat, stat`, a data connection, a read chain of
//!   13 + ceil(jpeg / (4 read_chunk)) calls, and a write chain of
//!   ceil(jpeg / (3 write_chunk)) calls plus a retransmission jitter of
//!   0..7 extra writes; half the uploads run a second pass (a fixed-size
//!   companion file: `read x4, write x20`, then a completion write);
//! - HTTP log: `write x3, socket, connect, brk, sendto, close, write`,
//!   then `stat`;
//! - background: `futex, futex, brk, rt_sigreturn` up front and a final
//!   `futex`.
//!
//! JPEG sizes are drawn from two plateaus of the configured range (small
//! ~27-28.5 KB, large ~90.5-94 KB), matching an encoder that mostly sees
//! two scene regimes. Together with the second-pass split this yields
//! five distinct execution contexts over 14 syscall types, four of which
//! (brk, futex, rt_sigreturn, sendto) never vary. The second-pass chain
//! lengths are aligned so a small-image second-pass upload is
//! count-identical to a large-image single-pass one.

use crate::trace::{ExecutionTrace, Framing, TraceEvent};

/// Generator parameters; defaults follow the target application.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub raw_image_bytes: u64,
    pub jpeg_min: u32,
    pub jpeg_max: u32,
    /// Probability that the FTP upload stage is skipped.
    pub ftp_skip_prob: f64,
    pub write_chunk: u32,
    pub read_chunk: u32,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            seed: 7,
            raw_image_bytes: 2_600_000,
            jpeg_min: 27_000,
            jpeg_max: 97_000,
            ftp_skip_prob: 0.5,
            write_chunk: 4096,
            read_chunk: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    /// Leak credentials to an adversary HTTP server using the logging
    /// routine.
    HttpLeak,
    /// Upload the just-encoded image to an adversary FTP server.
    FtpLeak,
    /// Corrupt the raw image buffer; the JPEG collapses to 15 KB.
    DataCorrupt,
    /// Injected shellcode spawning a shell; the end marker never runs.
    Shellcode,
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::HttpLeak => "httpleak",
            AttackKind::FtpLeak => "ftpleak",
            AttackKind::DataCorrupt => "datacorrupt",
            AttackKind::Shellcode => "shellcode",
        }
    }
}

/// Flow selection for a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowChoice {
    /// Skip the upload with `ftp_skip_prob`, as the application does.
    Random,
    /// Force the FTP upload (Flow 1).
    Ftp,
    /// Force the skip branch (Flow 2).
    NoFtp,
}

// Camera device read granularity: 2.6 MB raw frames arrive in 91 reads.
const CAM_READ_CHUNK: u64 = 28_672;
// The FTP client writes the socket in 3x and reads the file in 4x the
// base chunk.
const FTP_WRITE_CHUNK_FACTOR: u32 = 3;
const FTP_READ_CHUNK_FACTOR: u32 = 4;
// Protocol overhead reads on the control connection.
const FTP_PROTO_READS: u32 = 13;
// Retransmission jitter on the upload write chain: 0..=7 extra writes.
const FTP_WRITE_JITTER: u32 = 8;
// Second upload pass: probability and its exact extra chain lengths
// (chosen so small+second-pass equals large+single-pass coordinatewise).
const FTP_SECOND_PASS_PROB: f64 = 0.5;
const FTP_SECOND_PASS_WRITES: u32 = 20;
const FTP_SECOND_PASS_READS: u32 = 4;
// The corrupted (all-black) image compresses to this size.
const CORRUPT_JPEG_BYTES: u32 = 15_000;
// JPEG size plateaus, relative to the configured range.
const SMALL_PLATEAU_WIDTH: u32 = 1500;
const LARGE_PLATEAU_LO_OFF: u32 = 6500;
const LARGE_PLATEAU_HI_OFF: u32 = 3000;
const SMALL_PLATEAU_PROB: f64 = 0.5;

/// SplitMix64. State advances by the golden-ratio increment; the output
/// runs the state through two xor-multiply mixing rounds:
///   state += 0x9E3779B97F4A7C15
///   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
///   z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
#[derive(Debug, Clone)]
pub struct Sm64 {
    state: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Sm64 {
    pub fn new(state: u64) -> Self {
        Sm64 { state }
    }

    /// Independent substream for one trace: the seed and index are each
    /// mixed before combination so neighboring indices do not overlap.
    pub fn substream(seed: u64, index: u64) -> Self {
        Sm64::new(mix64(seed ^ mix64(index.wrapping_add(0x9E3779B97F4A7C15))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [lo, hi]; the modulo bias is negligible at
    /// these ranges and keeps the generator exactly reproducible.
    pub fn uniform_u32(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo <= hi);
        lo + (self.next_u64() % (hi - lo + 1) as u64) as u32
    }
}

fn div_ceil_u32(a: u32, b: u32) -> u32 {
    (a + b - 1) / b
}

struct TraceBuilder {
    events: Vec<TraceEvent>,
}

impl TraceBuilder {
    fn new() -> Self {
        TraceBuilder { events: Vec::new() }
    }
    fn call(&mut self, name: &str) {
        self.events.push(TraceEvent::call(name));
    }
    fn calls(&mut self, name: &str, n: u32) {
        for _ in 0..n {
            self.call(name);
        }
    }
}

struct Draws {
    jpeg_bytes: u32,
    ftp: bool,
    write_jitter: u32,
    second_pass: bool,
}

fn draw(spec: &WorkloadSpec, rng: &mut Sm64, flow: FlowChoice, attack: AttackKind) -> Draws {
    // Fixed draw order keeps corpora comparable across attack variants.
    let small = rng.next_f64() < SMALL_PLATEAU_PROB;
    let (lo, hi) = if small {
        (spec.jpeg_min, (spec.jpeg_min + SMALL_PLATEAU_WIDTH).min(spec.jpeg_max))
    } else {
        (
            spec.jpeg_max.saturating_sub(LARGE_PLATEAU_LO_OFF).max(spec.jpeg_min),
            spec.jpeg_max.saturating_sub(LARGE_PLATEAU_HI_OFF).max(spec.jpeg_min),
        )
    };
    let mut jpeg_bytes = rng.uniform_u32(lo, hi.max(lo));
    let ftp_drawn = rng.next_f64() >= spec.ftp_skip_prob;
    let write_jitter = rng.uniform_u32(0, FTP_WRITE_JITTER - 1);
    let second_pass = rng.next_f64() < FTP_SECOND_PASS_PROB;

    if attack == AttackKind::DataCorrupt {
        jpeg_bytes = CORRUPT_JPEG_BYTES;
    }
    let ftp = match flow {
        FlowChoice::Random => ftp_drawn,
        FlowChoice::Ftp => true,
        FlowChoice::NoFtp => false,
    };
    Draws {
        jpeg_bytes,
        ftp,
        write_jitter,
        second_pass,
    }
}

fn emit_http_fn(b: &mut TraceBuilder) {
    b.calls("write", 3);
    b.call("socket");
    b.call("connect");
    b.call("brk");
    b.call("sendto");
    b.call("close");
    b.call("write");
}

fn emit_ftp_stage(
    b: &mut TraceBuilder,
    spec: &WorkloadSpec,
    jpeg_bytes: u32,
    write_jitter: u32,
    second_pass: bool,
) {
    let read_chain =
        FTP_PROTO_READS + div_ceil_u32(jpeg_bytes, FTP_READ_CHUNK_FACTOR * spec.read_chunk);
    let write_chain =
        div_ceil_u32(jpeg_bytes, FTP_WRITE_CHUNK_FACTOR * spec.write_chunk) + write_jitter;

    b.call("socket");
    b.call("connect");
    b.calls("write", 2); // USER / PASS
    b.calls("stat", 2);
    b.call("open");
    b.call("fstat");
    b.call("mmap");
    b.call("socket"); // data connection
    b.call("connect");
    b.calls("read", read_chain);
    b.call("close"); // file
    b.calls("write", write_chain);
    b.call("write"); // transfer completion
    if second_pass {
        // Companion-file pass over the same connections.
        b.calls("read", FTP_SECOND_PASS_READS);
        b.calls("write", FTP_SECOND_PASS_WRITES);
        b.call("write"); // completion
    }
    b.call("close"); // data socket
    b.call("close"); // control socket
    b.call("munmap");
    b.call("write"); // QUIT
}

/// Generate one execution trace. Deterministic in (spec.seed, index);
/// the attack, when any, is spliced at its natural point in the flow.
pub fn gen_trace(
    spec: &WorkloadSpec,
    attack: AttackKind,
    index: u64,
    flow: FlowChoice,
) -> ExecutionTrace {
    let mut rng = Sm64::substream(spec.seed, index);
    let d = draw(spec, &mut rng, flow, attack);
    let mut b = TraceBuilder::new();

    // Background startup.
    b.calls("futex", 2);
    b.call("brk");
    b.call("rt_sigreturn");

    // Camera frame.
    b.call("open");
    b.calls("read", div_ceil_u32(spec.raw_image_bytes as u32, CAM_READ_CHUNK as u32));
    b.call("close");
    b.calls("stat", 2);

    // JPEG encode (in memory), then file write.
    let fw_chain = div_ceil_u32(d.jpeg_bytes, spec.write_chunk);
    b.call("open");
    b.call("fstat");
    b.call("mmap");
    b.calls("write", fw_chain);
    b.call("close");
    b.call("munmap");
    b.call("write");

    if attack == AttackKind::Shellcode {
        // The injected code runs instead of the remaining stages; execve
        // does not return, so the region never closes.
        b.call("execve");
        b.call("open");
        b.call("mmap");
        b.call("access");
        b.call("getuid");
        return ExecutionTrace::new(
            format!("{}-{index:05}-flow{}", attack.label(), if d.ftp { 1 } else { 2 }),
            b.events,
            Framing::Unterminated,
        );
    }

    if d.ftp {
        emit_ftp_stage(&mut b, spec, d.jpeg_bytes, d.write_jitter, d.second_pass);
    }

    if attack == AttackKind::FtpLeak {
        // Same upload routine, adversary server, same image.
        let jitter = rng.uniform_u32(0, FTP_WRITE_JITTER - 1);
        let second = rng.next_f64() < FTP_SECOND_PASS_PROB;
        emit_ftp_stage(&mut b, spec, d.jpeg_bytes, jitter, second);
    }

    emit_http_fn(&mut b);
    if attack == AttackKind::HttpLeak {
        // Same logging routine, adversary server.
        emit_http_fn(&mut b);
    }
    b.call("stat");

    b.call("futex");

    ExecutionTrace::new(
        format!("{}-{index:05}-flow{}", attack.label(), if d.ftp { 1 } else { 2 }),
        b.events,
        Framing::Closed,
    )
}

/// Generate `n` traces from sequential deterministic substreams.
pub fn gen_corpus(
    spec: &WorkloadSpec,
    n: u64,
    attack: AttackKind,
    flow: FlowChoice,
) -> Vec<ExecutionTrace> {
    (0..n).map(|i| gen_trace(spec, attack, i, flow)).collect()
}
