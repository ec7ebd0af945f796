//! Profile assembly, persistence, and the legitimacy test applied to new
//! executions.
//!
//! The test is a fixed rule cascade: (i) a syscall type never seen in
//! training is malicious outright; (ii) a change in the summed count of
//! the zero-variance types is malicious; (iii) an observation farther
//! than the cutoff from every cluster is malicious. Anything else is
//! legitimate.

mod format;

pub use format::{load_profile, read_profile, save_profile, write_profile, ProfileIoError};

use thiserror::Error;

use crate::cluster::{assign_closest, global_kmeans, ClusterSet, GkmConfig};
use crate::stats::{
    apply_reduction, compute_cutoff, fit_reduction, ClusterCentroid, Cutoff, DimReduction,
    StatsError,
};
use crate::trace::{
    build_scfd, ExecutionTrace, Framing, OnUnknown, SyscallAlphabet, TraceError, TrainingSet,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least 2 executions, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Everything needed to classify new executions of one application.
#[derive(Debug, Clone)]
pub struct Profile {
    pub alphabet: SyscallAlphabet,
    pub reduction: DimReduction,
    pub clusters: Vec<ClusterCentroid>,
    pub cutoff: Cutoff,
    pub meta: ProfileMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMeta {
    pub app_id: String,
    /// Unix epoch seconds; zero under deterministic output.
    pub trained_at: u64,
    pub tool_version: String,
    pub gkm: GkmConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Legit,
    Malicious,
}

/// Which rule fired, with enough detail to explain the verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleTrigger {
    /// Rule (i): a syscall type absent from the training alphabet.
    UnseenType(String),
    /// Rule (ii): the merged zero-variance residual moved.
    ZeroVarianceChanged { expected: u64, observed: u64 },
    /// Rule (iii): closer to no cluster than the cutoff allows.
    DistanceExceeded,
    /// Syscalls observed outside any monitored region.
    OutOfRegionCall,
}

impl RuleTrigger {
    pub fn label(&self) -> String {
        match self {
            RuleTrigger::UnseenType(name) => format!("unseen_type({name})"),
            RuleTrigger::ZeroVarianceChanged { expected, observed } => {
                format!("zero_variance_changed({expected}->{observed})")
            }
            RuleTrigger::DistanceExceeded => "distance_exceeded".to_string(),
            RuleTrigger::OutOfRegionCall => "out_of_region".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub rule: Option<RuleTrigger>,
    /// Populated whenever rule (i) did not fire.
    pub closest_cluster: Option<usize>,
    pub distance: Option<f64>,
    pub theta: f64,
}

impl Verdict {
    pub fn is_malicious(&self) -> bool {
        self.decision == Decision::Malicious
    }
}

/// Ablation switches for the rule cascade; both on by default. With the
/// unseen-type rule disabled, unknown names are simply not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleSet {
    pub unseen_type: bool,
    pub zero_variance: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            unseen_type: true,
            zero_variance: true,
        }
    }
}

impl RuleSet {
    pub fn all() -> Self {
        Self::default()
    }
}

/// Fit reduction, cluster the reduced rows, derive the cutoff, and
/// package the result.
pub fn train_profile(ts: &TrainingSet, cfg: &GkmConfig, p0: f64) -> Result<Profile, TrainError> {
    Ok(train_profile_with_details(ts, cfg, p0)?.0)
}

/// Same as [`train_profile`] but also returns the cluster set (with
/// assignments) for reporting.
pub fn train_profile_with_details(
    ts: &TrainingSet,
    cfg: &GkmConfig,
    p0: f64,
) -> Result<(Profile, ClusterSet), TrainError> {
    if ts.len() < 2 {
        return Err(TrainError::TooFewRows(ts.len()));
    }
    let reduction = fit_reduction(ts);
    let mut reduced = Vec::with_capacity(ts.len());
    for row in &ts.rows {
        reduced.push(apply_reduction(&reduction, row)?.0);
    }
    let clusters = global_kmeans(&reduced, cfg);
    let cutoff = compute_cutoff(p0)?;
    let profile = Profile {
        alphabet: ts.alphabet.clone(),
        reduction,
        clusters: clusters.centroids.clone(),
        cutoff,
        meta: ProfileMeta {
            app_id: String::new(),
            trained_at: 0,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            gkm: cfg.clone(),
        },
    };
    Ok((profile, clusters))
}

/// Classify one execution with the full rule cascade.
pub fn classify(p: &Profile, trace: &ExecutionTrace) -> Verdict {
    classify_with_rules(p, trace, RuleSet::all())
}

/// Classify with selected rules disabled (the re-test protocol).
pub fn classify_with_rules(p: &Profile, trace: &ExecutionTrace, rules: RuleSet) -> Verdict {
    let theta = p.cutoff.theta;

    if trace.framing == Framing::OutOfRegion && trace.call_count() > 0 {
        return Verdict {
            decision: Decision::Malicious,
            rule: Some(RuleTrigger::OutOfRegionCall),
            closest_cluster: None,
            distance: None,
            theta,
        };
    }

    // Rule (i): unseen syscall type.
    let on_unknown = if rules.unseen_type {
        OnUnknown::Reject
    } else {
        OnUnknown::Extend
    };
    let (scfd, _) = match build_scfd(trace, &p.alphabet, on_unknown) {
        Ok(v) => v,
        Err(TraceError::UnknownSyscall(name)) => {
            return Verdict {
                decision: Decision::Malicious,
                rule: Some(RuleTrigger::UnseenType(name)),
                closest_cluster: None,
                distance: None,
                theta,
            };
        }
        Err(_) => unreachable!("build_scfd only fails on unknown syscalls"),
    };
    // Under Extend the vector may have grown; the extra coordinates are
    // deliberately ignored.
    let scfd = crate::trace::Scfd {
        counts: scfd.counts[..p.alphabet.len()].to_vec(),
    };

    let (reduced, residual) =
        apply_reduction(&p.reduction, &scfd).expect("profile reduction matches alphabet");

    // Distance to the closest cluster (always available past rule (i)).
    let (closest, distance) = if p.reduction.reduced_dim() == 0 {
        (0, 0.0)
    } else {
        assign_closest(&p.clusters, &reduced)
    };

    // Rule (ii): zero-variance residual moved.
    if rules.zero_variance && residual != p.reduction.residual_expected {
        return Verdict {
            decision: Decision::Malicious,
            rule: Some(RuleTrigger::ZeroVarianceChanged {
                expected: p.reduction.residual_expected,
                observed: residual,
            }),
            closest_cluster: Some(closest),
            distance: Some(distance),
            theta,
        };
    }

    // Rule (iii): farther than the cutoff from every cluster.
    if distance > theta {
        return Verdict {
            decision: Decision::Malicious,
            rule: Some(RuleTrigger::DistanceExceeded),
            closest_cluster: Some(closest),
            distance: Some(distance),
            theta,
        };
    }

    Verdict {
        decision: Decision::Legit,
        rule: None,
        closest_cluster: Some(closest),
        distance: Some(distance),
        theta,
    }
}

/// Classify while tallying the multiply-adds spent in distance
/// computations; used by the cost evaluation.
pub fn classify_counted(p: &Profile, trace: &ExecutionTrace) -> (Verdict, u64) {
    let mut madds = 0u64;
    let verdict = classify(p, trace);
    // Rules (i)/(ii) cost no multiply-adds; the distance scan costs
    // k * (D'^2 + D') when it runs.
    if verdict.closest_cluster.is_some() && p.reduction.reduced_dim() > 0 {
        let d = p.reduction.reduced_dim() as u64;
        madds += p.clusters.len() as u64 * (d * d + d);
    }
    (verdict, madds)
}

/// Human-readable report for a verdict. The first line is stable:
/// `VERDICT=<LEGIT|MALICIOUS> rule=<...> dist=<...> theta=<...>`.
pub fn explain(v: &Verdict, p: &Profile, trace: &ExecutionTrace) -> String {
    let mut out = String::new();
    let decision = match v.decision {
        Decision::Legit => "LEGIT",
        Decision::Malicious => "MALICIOUS",
    };
    let rule = v
        .rule
        .as_ref()
        .map(|r| r.label())
        .unwrap_or_else(|| "none".to_string());
    let dist = v
        .distance
        .map(|d| format!("{d:.6}"))
        .unwrap_or_else(|| "n/a".to_string());
    out.push_str(&format!(
        "VERDICT={decision} rule={rule} dist={dist} theta={:.6}\n",
        v.theta
    ));

    if let Some(cluster) = v.closest_cluster {
        out.push_str(&format!("  closest cluster: c{cluster}\n"));
        if p.reduction.reduced_dim() > 0 {
            if let Ok((scfd, _)) = build_scfd(trace, &p.alphabet, OnUnknown::Extend) {
                let scfd = crate::trace::Scfd {
                    counts: scfd.counts[..p.alphabet.len()].to_vec(),
                };
                if let Ok((reduced, _)) = apply_reduction(&p.reduction, &scfd) {
                    let contribs = p.clusters[cluster].quadratic_contributions(&reduced);
                    let mut ranked: Vec<(usize, f64)> =
                        contribs.into_iter().enumerate().collect();
                    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    out.push_str("  top contributions to squared distance:\n");
                    for (j, value) in ranked.iter().take(5) {
                        let name = p.alphabet.name(p.reduction.kept[*j]);
                        out.push_str(&format!("    {name}: {value:+.6}\n"));
                    }
                }
            }
        }
    }
    if let Some(RuleTrigger::UnseenType(name)) = &v.rule {
        out.push_str(&format!("  unseen syscall: {name}\n"));
    }
    if let Some(RuleTrigger::ZeroVarianceChanged { expected, observed }) = &v.rule {
        out.push_str(&format!(
            "  zero-variance residual: expected {expected}, observed {observed}\n"
        ));
    }
    out
}

/// Table-shaped training summary: per-cluster member count plus mean and
/// standard deviation of every kept syscall type, a `*` marking columns
/// whose within-cluster variance is nonzero.
pub fn cluster_summary(ts: &TrainingSet, reduction: &DimReduction, cs: &ClusterSet) -> String {
    let kept_names: Vec<&str> = reduction
        .kept
        .iter()
        .map(|&i| ts.alphabet.name(i))
        .collect();
    let mut out = String::new();
    out.push_str(&format!(
        "clusters: {}   reduced dims: {} of {}\n",
        cs.k(),
        reduction.reduced_dim(),
        reduction.input_dim
    ));
    out.push_str(&format!("{:<8}{:>7}", "cluster", "n"));
    for n in &kept_names {
        out.push_str(&format!("{:>18}", n));
    }
    out.push('\n');

    let mut stats_row = |label: String, rows: Vec<Vec<f64>>| {
        let n = rows.len();
        out.push_str(&format!("{label:<8}{n:>7}"));
        for j in 0..kept_names.len() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let sd = var.sqrt();
            let mark = if sd > 0.0 { "*" } else { " " };
            out.push_str(&format!("{:>18}", format!("{mean:.3} ({sd:.3}){mark}")));
        }
        out.push('\n');
    };

    let reduced: Vec<Vec<f64>> = ts
        .rows
        .iter()
        .map(|r| apply_reduction(reduction, r).expect("reduction fits").0)
        .collect();
    stats_row("all".to_string(), reduced.clone());
    for ci in 0..cs.k() {
        let members: Vec<Vec<f64>> = reduced
            .iter()
            .zip(&cs.assignments)
            .filter(|(_, &a)| a == ci)
            .map(|(r, _)| r.clone())
            .collect();
        stats_row(format!("c{ci}"), members);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{load_training_set, TraceEvent};

    fn trace_of(names: &[&str]) -> ExecutionTrace {
        ExecutionTrace::new(
            "t",
            names.iter().map(|n| TraceEvent::call(n)).collect(),
            Framing::Closed,
        )
    }

    /// Two execution modes with constant counts inside each: a network
    /// mode (3 reads, 4 writes, one socket) and a plain mode (5 reads).
    fn two_mode_training() -> Vec<ExecutionTrace> {
        let mut traces = Vec::new();
        for i in 0..10 {
            let mut names = vec!["futex"];
            if i < 5 {
                names.extend(["read"; 3]);
                names.extend(["write"; 4]);
                names.push("socket");
            } else {
                names.extend(["read"; 5]);
            }
            names.push("close");
            traces.push(trace_of(&names));
        }
        traces
    }

    fn tight_cfg() -> GkmConfig {
        GkmConfig {
            max_k: 6,
            bound_td: 4.0,
            ..GkmConfig::default()
        }
    }

    #[test]
    fn train_profile_separates_two_modes() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let (profile, cs) = train_profile_with_details(&ts, &tight_cfg(), 0.05).unwrap();
        assert_eq!(cs.k(), 2);
        assert_eq!(profile.clusters.len(), 2);
        // futex is the only constant coordinate: close is constant too.
        assert!(profile.reduction.merged.len() >= 2);
        assert!((profile.cutoff.theta - 1.95996).abs() < 1e-4);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let traces = vec![trace_of(&["read"])];
        let ts = load_training_set(&traces).unwrap();
        assert!(matches!(
            train_profile(&ts, &GkmConfig::default(), 0.05),
            Err(TrainError::TooFewRows(1))
        ));
    }

    #[test]
    fn fully_constant_training_data_is_legal() {
        let traces = vec![trace_of(&["read", "write"]), trace_of(&["read", "write"])];
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &GkmConfig::default(), 0.05).unwrap();
        assert_eq!(profile.reduction.reduced_dim(), 0);
        assert!(!profile.clusters.is_empty());

        // Rules (i)/(ii) still apply; rule (iii) trivially passes.
        let v = classify(&profile, &trace_of(&["read", "write"]));
        assert_eq!(v.decision, Decision::Legit);
        assert_eq!(v.distance, Some(0.0));
        let v = classify(&profile, &trace_of(&["read", "read", "write"]));
        assert!(matches!(
            v.rule,
            Some(RuleTrigger::ZeroVarianceChanged { expected: 2, observed: 3 })
        ));
        let v = classify(&profile, &trace_of(&["execve"]));
        assert!(matches!(v.rule, Some(RuleTrigger::UnseenType(ref n)) if n == "execve"));
    }

    #[test]
    fn rule_order_unseen_fires_first() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();
        // This trace violates all three rules; rule (i) must win.
        let v = classify(&profile, &trace_of(&["execve", "read"]));
        assert!(matches!(v.rule, Some(RuleTrigger::UnseenType(_))));
        assert!(v.closest_cluster.is_none());
        assert!(v.distance.is_none());
    }

    #[test]
    fn training_members_are_legit_and_attacks_are_caught() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();

        for t in &traces {
            let v = classify(&profile, t);
            assert_eq!(v.decision, Decision::Legit, "training trace flagged: {v:?}");
            assert!(v.distance.unwrap() <= v.theta);
        }

        // One extra futex: futex had zero training variance.
        let v = classify(
            &profile,
            &trace_of(&["futex", "futex", "read", "read", "read", "close"]),
        );
        assert!(matches!(v.rule, Some(RuleTrigger::ZeroVarianceChanged { .. })));

        // Wildly more reads: distance rule.
        let mut names = vec!["futex"];
        for _ in 0..40 {
            names.push("read");
        }
        names.push("close");
        let v = classify(&profile, &trace_of(&names));
        assert!(matches!(v.rule, Some(RuleTrigger::DistanceExceeded)));
        assert!(v.distance.unwrap() > v.theta);
    }

    #[test]
    fn ablation_disables_rules() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();

        // Extra futex trips rule (ii) normally; with it disabled the
        // trace is otherwise identical to training, so it passes.
        let t = trace_of(&["futex", "futex", "read", "read", "read", "read", "read", "close"]);
        assert!(classify(&profile, &t).is_malicious());
        let ablated = RuleSet {
            unseen_type: true,
            zero_variance: false,
        };
        let v = classify_with_rules(&profile, &t, ablated);
        assert_eq!(v.decision, Decision::Legit);

        // Unknown syscalls are ignored when rule (i) is off.
        let t = trace_of(&["getuid", "futex", "read", "read", "read", "read", "read", "close"]);
        assert!(classify(&profile, &t).is_malicious());
        let ablated = RuleSet {
            unseen_type: false,
            zero_variance: true,
        };
        let v = classify_with_rules(&profile, &t, ablated);
        assert_eq!(v.decision, Decision::Legit);
    }

    #[test]
    fn out_of_region_calls_are_malicious() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();
        let stray = ExecutionTrace::new(
            "out-of-region-0",
            vec![TraceEvent::call("read")],
            Framing::OutOfRegion,
        );
        let v = classify(&profile, &stray);
        assert!(matches!(v.rule, Some(RuleTrigger::OutOfRegionCall)));
    }

    #[test]
    fn threshold_monotonicity_legit_sets_nest() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let strict = train_profile(&ts, &tight_cfg(), 0.05).unwrap();
        let relaxed = train_profile(&ts, &tight_cfg(), 0.01).unwrap();
        assert!(relaxed.cutoff.theta > strict.cutoff.theta);

        // Probe traces with varying read counts around the trained modes.
        for extra in 0..10 {
            let mut names = vec!["futex"];
            for _ in 0..(3 + extra) {
                names.push("read");
            }
            names.push("close");
            let t = trace_of(&names);
            let at_05 = classify(&strict, &t);
            let at_01 = classify(&relaxed, &t);
            if at_05.decision == Decision::Legit {
                assert_eq!(at_01.decision, Decision::Legit);
            }
        }
    }

    #[test]
    fn classify_cost_is_independent_of_trace_length() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();

        let short = &traces[0];
        let mut long_names: Vec<&str> = short.call_names().collect();
        let base: Vec<&str> = long_names.clone();
        for _ in 0..9 {
            long_names.extend(base.iter().copied());
        }
        let long = trace_of(&long_names);

        let (_, ops_short) = classify_counted(&profile, short);
        let (_, ops_long) = classify_counted(&profile, &long);
        assert_eq!(ops_short, ops_long);
        let d = profile.reduction.reduced_dim() as u64;
        assert_eq!(ops_short, profile.clusters.len() as u64 * (d * d + d));
    }

    #[test]
    fn explain_formats_are_stable() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();

        let legit = classify(&profile, &traces[0]);
        let text = explain(&legit, &profile, &traces[0]);
        assert!(text.starts_with("VERDICT=LEGIT rule=none dist="));
        assert!(text.contains("theta=1.959"));

        let bad = trace_of(&["execve"]);
        let v = classify(&profile, &bad);
        let text = explain(&v, &profile, &bad);
        assert!(text.starts_with("VERDICT=MALICIOUS rule=unseen_type(execve)"));
        assert!(text.contains("execve"));
    }

    #[test]
    fn explain_ranks_contributions_consistently_with_expansion() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let profile = train_profile(&ts, &tight_cfg(), 0.05).unwrap();

        let mut names = vec!["futex"];
        for _ in 0..30 {
            names.push("read");
        }
        names.push("close");
        let t = trace_of(&names);
        let v = classify(&profile, &t);
        assert!(matches!(v.rule, Some(RuleTrigger::DistanceExceeded)));
        let text = explain(&v, &profile, &t);

        // Independent expansion of the quadratic form.
        let (scfd, _) = build_scfd(&t, &profile.alphabet, OnUnknown::Reject).unwrap();
        let (reduced, _) = apply_reduction(&profile.reduction, &scfd).unwrap();
        let c = &profile.clusters[v.closest_cluster.unwrap()];
        let mut expected: Vec<(String, f64)> = (0..reduced.len())
            .map(|i| {
                let mut s = 0.0;
                for j in 0..reduced.len() {
                    s += c.inv_cov.get(i, j) * (reduced[j] - c.mean[j]);
                }
                (
                    profile.alphabet.name(profile.reduction.kept[i]).to_string(),
                    (reduced[i] - c.mean[i]) * s,
                )
            })
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1));
        // The top contributor named in the report matches the expansion.
        let top_line = text
            .lines()
            .find(|l| l.trim_start().starts_with(&expected[0].0))
            .expect("top contributor listed");
        assert!(top_line.contains(&expected[0].0));
    }

    #[test]
    fn summary_has_star_markers_and_counts() {
        let traces = two_mode_training();
        let ts = load_training_set(&traces).unwrap();
        let (_, cs) = train_profile_with_details(&ts, &tight_cfg(), 0.05).unwrap();
        let reduction = fit_reduction(&ts);
        let text = cluster_summary(&ts, &reduction, &cs);
        assert!(text.contains("clusters: 2"));
        assert!(text.contains('*'));
        assert!(text.contains("all"));
        assert!(text.contains("c0"));
    }
}
