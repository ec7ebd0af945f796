//! Sequence-model baseline: a probabilistic suffix tree holding the
//! conditional next-call distribution for every context up to a bounded
//! depth. Scoring walks the longest context present in the tree; a
//! transition never seen in training scores exactly zero, which is the
//! detection signal.

use std::collections::HashMap;

use crate::trace::{ExecutionTrace, SyscallAlphabet};

type Sym = u32;

#[derive(Debug, Clone, Default)]
struct Node {
    /// Counts of the symbol following this context.
    next_counts: HashMap<Sym, u64>,
    /// Sum of `next_counts`.
    total: u64,
    /// Children keyed by the symbol one step further back in history.
    children: HashMap<Sym, Node>,
}

impl Node {
    fn add(&mut self, next: Sym) {
        *self.next_counts.entry(next).or_insert(0) += 1;
        self.total += 1;
    }
}

#[derive(Debug, Clone)]
pub struct PstModel {
    pub alphabet: SyscallAlphabet,
    pub max_depth: usize,
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PstVerdict {
    Legit,
    /// First call position whose conditional probability fell below the
    /// threshold.
    Malicious { position: usize },
}

/// Count every (context, next) pair for context lengths 0..=max_depth.
/// Contexts never span trace boundaries. Nodes whose occurrence count
/// ends up below `min_count` are pruned; the default of 1 keeps all.
pub fn pst_train(traces: &[ExecutionTrace], max_depth: usize, min_count: u64) -> PstModel {
    assert!(!traces.is_empty(), "need at least one trace");
    assert!(max_depth >= 1);

    let mut names: Vec<&str> = traces.iter().flat_map(|t| t.call_names()).collect();
    names.sort_unstable();
    names.dedup();
    let alphabet = SyscallAlphabet::from_names(names).expect("deduplicated names");

    let mut root = Node::default();
    for trace in traces {
        let syms: Vec<Sym> = trace
            .call_names()
            .map(|n| alphabet.index_of(n).expect("name in union") as Sym)
            .collect();
        for t in 0..syms.len() {
            let next = syms[t];
            root.add(next);
            let mut node = &mut root;
            for back in 1..=max_depth.min(t) {
                let ctx_sym = syms[t - back];
                node = node.children.entry(ctx_sym).or_default();
                node.add(next);
            }
        }
    }
    if min_count > 1 {
        prune(&mut root, min_count);
    }
    PstModel {
        alphabet,
        max_depth,
        root,
    }
}

fn prune(node: &mut Node, min_count: u64) {
    node.children.retain(|_, child| child.total >= min_count);
    for child in node.children.values_mut() {
        prune(child, min_count);
    }
}

impl PstModel {
    /// Probability of the call at `t` given the longest suffix of its
    /// predecessors that exists in the tree.
    fn prob_at(&self, syms: &[Option<Sym>], t: usize) -> f64 {
        let next = match syms[t] {
            Some(s) => s,
            None => return 0.0, // symbol outside the alphabet
        };
        let mut node = &self.root;
        for back in 1..=self.max_depth.min(t) {
            let ctx = match syms[t - back] {
                Some(s) => s,
                None => break,
            };
            match node.children.get(&ctx) {
                Some(child) => node = child,
                None => break,
            }
        }
        if node.total == 0 {
            return 0.0;
        }
        *node.next_counts.get(&next).unwrap_or(&0) as f64 / node.total as f64
    }

    fn symbols(&self, trace: &ExecutionTrace) -> Vec<Option<Sym>> {
        trace
            .call_names()
            .map(|n| self.alphabet.index_of(n).map(|i| i as Sym))
            .collect()
    }

    /// Deterministic text dump for golden tests: one line per context,
    /// sorted, with sorted next:count pairs.
    pub fn export_text(&self) -> String {
        let mut lines = Vec::new();
        let mut ctx: Vec<Sym> = Vec::new();
        self.dump(&self.root, &mut ctx, &mut lines);
        lines.sort();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    fn dump(&self, node: &Node, ctx: &mut Vec<Sym>, lines: &mut Vec<String>) {
        // ctx holds symbols most-recent-first; print oldest-first.
        let printable: Vec<&str> = ctx
            .iter()
            .rev()
            .map(|&s| self.alphabet.name(s as usize))
            .collect();
        let mut nexts: Vec<(&str, u64)> = node
            .next_counts
            .iter()
            .map(|(&s, &c)| (self.alphabet.name(s as usize), c))
            .collect();
        nexts.sort();
        let nexts_str: Vec<String> = nexts.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        lines.push(format!(
            "[{}] -> {}",
            printable.join(" "),
            nexts_str.join(" ")
        ));
        let mut keys: Vec<Sym> = node.children.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            ctx.push(k);
            self.dump(&node.children[&k], ctx, lines);
            ctx.pop();
        }
    }
}

/// Per-call conditional probabilities for a trace.
pub fn pst_score(m: &PstModel, trace: &ExecutionTrace) -> Vec<f64> {
    let syms = m.symbols(trace);
    (0..syms.len()).map(|t| m.prob_at(&syms, t)).collect()
}

/// Malicious if any per-call probability falls below the threshold; the
/// reported position is the first offender.
pub fn pst_classify(m: &PstModel, trace: &ExecutionTrace, threshold: f64) -> PstVerdict {
    debug_assert!((0.0..=1.0).contains(&threshold));
    let syms = m.symbols(trace);
    for t in 0..syms.len() {
        if m.prob_at(&syms, t) < threshold {
            return PstVerdict::Malicious { position: t };
        }
    }
    PstVerdict::Legit
}

/// Default per-call probability threshold (1%).
pub const PST_DEFAULT_THRESHOLD: f64 = 0.01;
