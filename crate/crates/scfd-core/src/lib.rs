//! Learning and monitoring of execution contexts from system-call
//! frequency distributions.
//!
//! The pipeline: parse traces into per-execution syscall frequency
//! vectors, drop the coordinates that never vary (keeping their sum as a
//! guarded residual), cluster the rest with an incremental k-means under
//! the Mahalanobis metric, and derive a statistical cutoff distance from
//! a significance level. New executions are then checked against the
//! profile with a three-rule test. A bounded-depth suffix-tree sequence
//! model serves as the comparison baseline, and a deterministic workload
//! generator drives the end-to-end evaluation.

pub mod cluster;
pub mod detector;
pub mod eval;
pub mod pst;
pub mod stats;
pub mod synth;
pub mod trace;

pub use cluster::{assign_closest, global_kmeans, kmeans_refine, total_distance, ClusterSet, GkmConfig};
pub use detector::{
    classify, classify_with_rules, cluster_summary, explain, load_profile, save_profile,
    train_profile, train_profile_with_details, Decision, Profile, RuleSet, RuleTrigger, Verdict,
};
pub use stats::{
    apply_reduction, compute_cutoff, estimate_centroid, fit_reduction, mahalanobis,
    ClusterCentroid, Cutoff, DimReduction,
};
pub use trace::{
    build_scfd, load_training_set, parse_event_log, write_traces_jsonl, ExecutionTrace, Framing,
    OnUnknown, Scfd, SyscallAlphabet, TraceEvent, TraceFormat, TrainingSet,
};
