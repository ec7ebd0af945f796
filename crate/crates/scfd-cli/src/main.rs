//! Command-line frontend wiring the toolkit together: generate synthetic
//! corpora, train profiles, classify traces, run the evaluation
//! protocol, and inspect stored profiles.
//!
//! Exit codes: 0 success (and all-legit for classify), 1 I/O or data
//! error, 2 usage error, 3 at least one malicious verdict.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scfd_core::cluster::GkmConfig;
use scfd_core::detector::{
    classify_with_rules, cluster_summary, explain, load_profile, save_profile,
    train_profile_with_details, RuleSet,
};
use scfd_core::eval::{render_text_table, run_full_eval};
use scfd_core::synth::{gen_corpus, AttackKind, FlowChoice, WorkloadSpec};
use scfd_core::trace::{
    load_training_set, parse_event_log, write_traces_jsonl, ExecutionTrace, TraceFormat,
};

#[derive(Parser)]
#[command(name = "scfd", version, about = "Execution-context anomaly detection from syscall frequency distributions")]
struct Cli {
    /// Key=value overlay file; values apply where flags were not given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap the internal thread pool (default: SCFD_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Zero out timestamps and machine-specific metrics in outputs.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus.
    Gen(GenArgs),
    /// Train a profile from a trace corpus.
    Train(TrainArgs),
    /// Classify traces against a stored profile.
    Classify(ClassifyArgs),
    /// Run the full evaluation protocol and write report files.
    Eval(EvalArgs),
    /// Print a human-readable view of a stored profile.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of traces.
    #[arg(long)]
    n: Option<u64>,
    /// none | httpleak | ftpleak | datacorrupt | shellcode
    #[arg(long)]
    attack: Option<String>,
    /// any | 1 | 2 (1 = FTP upload, 2 = skip)
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input trace corpus.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out_profile: Option<PathBuf>,
    #[arg(long)]
    max_k: Option<usize>,
    #[arg(long)]
    bound_td: Option<f64>,
    /// Alternative to --bound-td: bound scaled by the corpus size.
    #[arg(long, conflicts_with = "bound_td")]
    bound_td_per_point: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Try every n-th point as a cluster seed (1 = all).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    app_id: Option<String>,
    /// jsonl | strace
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Print the full per-trace report, not just the verdict line.
    #[arg(long, default_value_t = false)]
    explain: bool,
    /// Comma list of rules to disable: i (unseen type), ii (residual).
    #[arg(long)]
    disable_rules: Option<String>,
    /// jsonl | strace
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Fresh attack-free corpus for false-positive measurement.
    #[arg(long)]
    normal: Option<PathBuf>,
    /// The corpus the profile was trained on (needed for the sequence
    /// baseline).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Attack corpora as name=path, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    attacks: Vec<String>,
    /// Suffix-tree depths, e.g. "3,5". Empty string: skip the baseline.
    #[arg(long)]
    pst_depths: Option<String>,
    /// Significance levels for the false-positive sweep, e.g. "0.05,0.01".
    #[arg(long)]
    p0_list: Option<String>,
    /// Output path prefix; writes <report>.json and <report>.txt.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    profile: Option<PathBuf>,
}

/// Key=value overlay; '#' starts a comment line.
struct Overlay(HashMap<String, String>);

impl Overlay {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config overlay {}", path.display()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("config overlay line {} is not key=value", no + 1))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Overlay(map))
    }

    fn fill<T: std::str::FromStr>(&self, slot: &mut Option<T>, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if slot.is_none() {
            if let Some(raw) = self.0.get(key) {
                let parsed = raw
                    .parse::<T>()
                    .map_err(|e| anyhow!("config overlay {key}={raw}: {e}"))?;
                *slot = Some(parsed);
            }
        }
        Ok(())
    }
}

fn echo_config(pairs: &[(&str, String)]) {
    let mut line = String::from("# config:");
    for (k, v) in pairs {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn parse_attack(name: &str) -> Result<AttackKind> {
    Ok(match name {
        "none" => AttackKind::None,
        "httpleak" => AttackKind::HttpLeak,
        "ftpleak" => AttackKind::FtpLeak,
        "datacorrupt" => AttackKind::DataCorrupt,
        "shellcode" => AttackKind::Shellcode,
        other => bail!("unknown attack kind {other:?}"),
    })
}

fn parse_flow(name: &str) -> Result<FlowChoice> {
    Ok(match name {
        "any" | "random" => FlowChoice::Random,
        "1" | "ftp" => FlowChoice::Ftp,
        "2" | "noftp" => FlowChoice::NoFtp,
        other => bail!("unknown flow {other:?} (expected any, 1 or 2)"),
    })
}

fn parse_format(name: &str) -> Result<TraceFormat> {
    Ok(match name {
        "jsonl" => TraceFormat::Jsonl,
        "strace" => TraceFormat::StraceText,
        other => bail!("unknown trace format {other:?} (expected jsonl or strace)"),
    })
}

fn read_traces(path: &Path, format: TraceFormat) -> Result<Vec<ExecutionTrace>> {
    let file =
        File::open(path).with_context(|| format!("opening trace file {}", path.display()))?;
    parse_event_log(BufReader::new(file), format)
        .with_context(|| format!("parsing {}", path.display()))
}

fn cmd_gen(args: GenArgs, overlay: &Overlay) -> Result<i32> {
    let mut a = args;
    overlay.fill(&mut a.seed, "seed")?;
    overlay.fill(&mut a.n, "n")?;
    overlay.fill(&mut a.attack, "attack")?;
    overlay.fill(&mut a.flow, "flow")?;
    overlay.fill(&mut a.out, "out")?;

    let seed = a.seed.unwrap_or(7);
    let n = a.n.unwrap_or(2000);
    let attack = parse_attack(a.attack.as_deref().unwrap_or("none"))?;
    let flow = parse_flow(a.flow.as_deref().unwrap_or("any"))?;
    let out = a.out.ok_or_else(|| anyhow!("--out is required"))?;
    echo_config(&[
        ("seed", seed.to_string()),
        ("n", n.to_string()),
        ("attack", attack.label().to_string()),
        ("flow", format!("{flow:?}")),
        ("out", out.display().to_string()),
    ]);

    let spec = WorkloadSpec {
        seed,
        ..WorkloadSpec::default()
    };
    let corpus = gen_corpus(&spec, n, attack, flow);
    let file =
        File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_traces_jsonl(&mut w, &corpus)?;
    w.flush()?;
    println!("wrote {} traces to {}", corpus.len(), out.display());
    Ok(0)
}

fn cmd_train(args: TrainArgs, overlay: &Overlay, deterministic: bool) -> Result<i32> {
    let mut a = args;
    overlay.fill(&mut a.input, "in")?;
    overlay.fill(&mut a.out_profile, "out-profile")?;
    overlay.fill(&mut a.max_k, "max-k")?;
    overlay.fill(&mut a.bound_td, "bound-td")?;
    overlay.fill(&mut a.bound_td_per_point, "bound-td-per-point")?;
    overlay.fill(&mut a.p0, "p0")?;
    overlay.fill(&mut a.ridge, "ridge")?;
    overlay.fill(&mut a.stride, "stride")?;
    overlay.fill(&mut a.app_id, "app-id")?;
    overlay.fill(&mut a.format, "format")?;

    let input = a.input.ok_or_else(|| anyhow!("--in is required"))?;
    let format = parse_format(a.format.as_deref().unwrap_or("jsonl"))?;
    let traces = read_traces(&input, format)?;
    let ts = load_training_set(&traces)?;

    let mut cfg = GkmConfig::default();
    if let Some(v) = a.max_k {
        cfg.max_k = v;
    }
    if let Some(v) = a.bound_td_per_point {
        cfg.bound_td = v * ts.len() as f64;
    } else if let Some(v) = a.bound_td {
        cfg.bound_td = v;
    }
    if let Some(v) = a.ridge {
        cfg.ridge = v;
    }
    if let Some(v) = a.stride {
        cfg.candidate_stride = v.max(1);
    }
    let p0 = a.p0.unwrap_or(0.05);
    echo_config(&[
        ("in", input.display().to_string()),
        ("n", ts.len().to_string()),
        ("max-k", cfg.max_k.to_string()),
        ("bound-td", cfg.bound_td.to_string()),
        ("ridge", cfg.ridge.to_string()),
        ("stride", cfg.candidate_stride.to_string()),
        ("p0", p0.to_string()),
    ]);

    let (mut profile, clusters) = train_profile_with_details(&ts, &cfg, p0)?;
    profile.meta.app_id = a.app_id.unwrap_or_else(|| "default".to_string());
    profile.meta.trained_at = if deterministic {
        0
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    };

    println!(
        "trained on {} executions: D {} -> D' {}, k={} clusters, theta={:.5} (p0={})",
        ts.len(),
        profile.reduction.input_dim,
        profile.reduction.reduced_dim(),
        clusters.k(),
        profile.cutoff.theta,
        p0
    );
    print!("{}", cluster_summary(&ts, &profile.reduction, &clusters));

    if let Some(path) = a.out_profile {
        save_profile(&profile, &path)?;
        println!("profile written to {}", path.display());
    }
    Ok(0)
}

fn parse_rule_set(disable: Option<&str>) -> Result<RuleSet> {
    let mut rules = RuleSet::all();
    if let Some(spec) = disable {
        for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
            match part.trim() {
                "i" => rules.unseen_type = false,
                "ii" => rules.zero_variance = false,
                other => bail!("unknown rule {other:?} (expected i or ii)"),
            }
        }
    }
    Ok(rules)
}

fn cmd_classify(args: ClassifyArgs, overlay: &Overlay) -> Result<i32> {
    let mut a = args;
    overlay.fill(&mut a.profile, "profile")?;
    overlay.fill(&mut a.input, "in")?;
    overlay.fill(&mut a.format, "format")?;
    overlay.fill(&mut a.disable_rules, "disable-rules")?;

    let profile_path = a.profile.ok_or_else(|| anyhow!("--profile is required"))?;
    let input = a.input.ok_or_else(|| anyhow!("--in is required"))?;
    let format = parse_format(a.format.as_deref().unwrap_or("jsonl"))?;
    let rules = parse_rule_set(a.disable_rules.as_deref())?;
    echo_config(&[
        ("profile", profile_path.display().to_string()),
        ("in", input.display().to_string()),
        (
            "rules",
            format!(
                "i={} ii={}",
                if rules.unseen_type { "on" } else { "off" },
                if rules.zero_variance { "on" } else { "off" }
            ),
        ),
    ]);

    let profile = load_profile(&profile_path)?;
    let traces = read_traces(&input, format)?;
    let mut any_malicious = false;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for trace in &traces {
        let verdict = classify_with_rules(&profile, trace, rules);
        any_malicious |= verdict.is_malicious();
        let report = explain(&verdict, &profile, trace);
        if a.explain {
            write!(out, "[{}]\n{}", trace.source_id, report)?;
        } else {
            let first = report.lines().next().unwrap_or_default();
            writeln!(out, "{first}")?;
        }
    }
    Ok(if any_malicious { 3 } else { 0 })
}

fn cmd_eval(args: EvalArgs, overlay: &Overlay, deterministic: bool) -> Result<i32> {
    let mut a = args;
    overlay.fill(&mut a.profile, "profile")?;
    overlay.fill(&mut a.normal, "normal")?;
    overlay.fill(&mut a.train, "train")?;
    overlay.fill(&mut a.pst_depths, "pst-depths")?;
    overlay.fill(&mut a.p0_list, "p0-list")?;
    overlay.fill(&mut a.report, "report")?;

    let profile_path = a.profile.ok_or_else(|| anyhow!("--profile is required"))?;
    let normal_path = a.normal.ok_or_else(|| anyhow!("--normal is required"))?;
    let report_path = a.report.ok_or_else(|| anyhow!("--report is required"))?;

    let depths: Vec<usize> = match a.pst_depths.as_deref() {
        None => vec![3, 5],
        Some(s) if s.trim().is_empty() => vec![],
        Some(s) => s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| anyhow!("--pst-depths: {e}")))
            .collect::<Result<_>>()?,
    };
    let p0_list: Vec<f64> = match a.p0_list.as_deref() {
        None => vec![0.05, 0.01],
        Some(s) => s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("--p0-list: {e}")))
            .collect::<Result<_>>()?,
    };
    for &p0 in &p0_list {
        if !(p0 > 0.0 && p0 <= 1.0) {
            bail!("p0 {p0} outside (0, 1]");
        }
    }
    if !depths.is_empty() && a.train.is_none() {
        bail!("--train is required when the sequence baseline runs (--pst-depths nonempty)");
    }

    echo_config(&[
        ("profile", profile_path.display().to_string()),
        ("normal", normal_path.display().to_string()),
        (
            "train",
            a.train
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "-".into()),
        ),
        ("attacks", a.attacks.join(",")),
        (
            "pst-depths",
            depths.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        ),
        ("deterministic", deterministic.to_string()),
        ("report", report_path.display().to_string()),
    ]);

    let profile = load_profile(&profile_path)?;
    let fresh = read_traces(&normal_path, TraceFormat::Jsonl)?;
    let train_traces = match &a.train {
        Some(p) => read_traces(p, TraceFormat::Jsonl)?,
        None => Vec::new(),
    };
    let mut corpora = Vec::new();
    for spec in &a.attacks {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--attacks expects name=path, got {spec:?}"))?;
        corpora.push((name.to_string(), read_traces(Path::new(path), TraceFormat::Jsonl)?));
    }

    let report = run_full_eval(
        &profile,
        &train_traces,
        &fresh,
        &corpora,
        &p0_list,
        &depths,
        if deterministic { 0 } else { 200 },
        deterministic,
    )?;

    let json_path = report_path.with_extension("json");
    let txt_path = report_path.with_extension("txt");
    let mut json_file = BufWriter::new(
        File::create(&json_path).with_context(|| format!("creating {}", json_path.display()))?,
    );
    serde_json::to_writer_pretty(&mut json_file, &report)?;
    json_file.write_all(b"\n")?;
    json_file.flush()?;
    let text = render_text_table(&report);
    std::fs::write(&txt_path, &text)?;
    print!("{text}");
    println!("report written to {} and {}", json_path.display(), txt_path.display());
    Ok(0)
}

fn cmd_inspect(args: InspectArgs, overlay: &Overlay) -> Result<i32> {
    let mut a = args;
    overlay.fill(&mut a.profile, "profile")?;
    let path = a.profile.ok_or_else(|| anyhow!("--profile is required"))?;
    let p = load_profile(&path)?;
    println!("profile {}", path.display());
    println!(
        "  app: {}  tool: v{}  trained_at: {}",
        p.meta.app_id, p.meta.tool_version, p.meta.trained_at
    );
    println!(
        "  alphabet ({} types): {}",
        p.alphabet.len(),
        p.alphabet.names().join(" ")
    );
    let kept: Vec<&str> = p.reduction.kept.iter().map(|&i| p.alphabet.name(i)).collect();
    let merged: Vec<&str> = p.reduction.merged.iter().map(|&i| p.alphabet.name(i)).collect();
    println!("  kept ({}): {}", kept.len(), kept.join(" "));
    println!(
        "  merged ({}, expected sum {}): {}",
        merged.len(),
        p.reduction.residual_expected,
        merged.join(" ")
    );
    println!("  cutoff: theta={:.5} (p0={})", p.cutoff.theta, p.cutoff.p0);
    println!(
        "  clustering: max_k={} bound_td={} ridge={} stride={}",
        p.meta.gkm.max_k, p.meta.gkm.bound_td, p.meta.gkm.ridge, p.meta.gkm.candidate_stride
    );
    for (i, c) in p.clusters.iter().enumerate() {
        let mean: Vec<String> = c.mean.iter().map(|m| format!("{m:.2}")).collect();
        println!("  c{i}: n={} mean=[{}]", c.member_count, mean.join(", "));
    }
    Ok(0)
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    let overlay = Overlay::load(cli.config.as_deref())?;

    let threads = cli.threads.or_else(|| {
        std::env::var("SCFD_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .ok();
    }

    match cli.command {
        Command::Gen(args) => cmd_gen(args, &overlay),
        Command::Train(args) => cmd_train(args, &overlay, cli.deterministic),
        Command::Classify(args) => cmd_classify(args, &overlay),
        Command::Eval(args) => cmd_eval(args, &overlay, cli.deterministic),
        Command::Inspect(args) => cmd_inspect(args, &overlay),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
