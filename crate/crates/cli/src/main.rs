//! `angelfish`: runs seeded simulation scenarios and checks their traces.
//!
//! Flags override the matching fields of the `--config` document. Exit codes:
//! 0 when every selected check passed, 2 on a safety violation, 3 on a
//! liveness issue, 1 on invalid input.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use angelfish::harness::{run_scenario, CheckSet, DotRequest, ScenarioConfig, ScenarioReport};
use angelfish::sim::{DelayModel, FaultScript, StopCondition};
use angelfish::{ProtocolMode, RbcKind};
use clap::{Parser, ValueEnum};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(
    name = "angelfish",
    version,
    about = "Run seeded Angelfish simulation scenarios"
)]
struct Args {
    /// Scenario document (JSON). Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Party count when no config is given.
    #[arg(long, short)]
    n: Option<usize>,
    /// Seed to run; repeat for a batch.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Leaders per round.
    #[arg(long)]
    leaders: Option<usize>,
    /// Fraction of parties that create a vertex in a round.
    #[arg(long)]
    propose_rate: Option<f64>,
    #[arg(long, value_enum)]
    rbc: Option<RbcArg>,
    /// Global stabilization time.
    #[arg(long)]
    gst: Option<u64>,
    /// Post-GST delay bound; keeps the configured delay model kind.
    #[arg(long)]
    delta: Option<u64>,
    /// Stop once every live honest party entered this round.
    #[arg(long)]
    rounds: Option<u64>,
    /// Fault script (JSON with `crashes` and `byzantine`).
    #[arg(long)]
    faults: Option<PathBuf>,
    /// Directory for config, metrics, traces and DOT files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    check: CheckArg,
    /// DAG of NODE over rounds FROM-TO (or a single round) as DOT.
    #[arg(long, value_name = "NODE:RANGE")]
    dot: Option<DotRequest>,
    /// Record every transmission in `trace-<seed>.jsonl`.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RbcArg {
    Bracha,
    #[value(name = "two_step")]
    TwoStep,
    #[value(name = "fast_path")]
    FastPath,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CheckArg {
    Safety,
    Liveness,
    All,
}

impl From<CheckArg> for CheckSet {
    fn from(c: CheckArg) -> Self {
        match c {
            CheckArg::Safety => CheckSet::Safety,
            CheckArg::Liveness => CheckSet::Liveness,
            CheckArg::All => CheckSet::All,
        }
    }
}

fn with_delta(model: DelayModel, delta: u64) -> DelayModel {
    match model {
        DelayModel::Fixed { .. } => DelayModel::Fixed { delta },
        DelayModel::Jitter { min, .. } => DelayModel::Jitter {
            min: min.min(delta),
            max: delta,
        },
        DelayModel::Adversarial { min, .. } => DelayModel::Adversarial {
            min: min.min(delta),
            max: delta,
        },
    }
}

fn build_config(args: &Args) -> Result<ScenarioConfig, String> {
    let mut cfg = match (&args.config, args.n) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            ScenarioConfig::from_json(&text)
                .map_err(|e| format!("parsing {}: {e}", path.display()))?
        }
        (None, Some(n)) => ScenarioConfig::new(n),
        (None, None) => return Err("either --config or -n is required".into()),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Single => ProtocolMode::Single,
            ModeArg::Multi => ProtocolMode::Multi,
        };
    }
    if let Some(k) = args.leaders {
        cfg.leaders_per_round = k;
        if k > 1 && args.mode.is_none() {
            cfg.mode = ProtocolMode::Multi;
        }
    }
    if let Some(x) = args.propose_rate {
        cfg.propose_rate = x;
    }
    if let Some(r) = args.rbc {
        cfg.rbc = match r {
            RbcArg::Bracha => RbcKind::Bracha,
            RbcArg::TwoStep => RbcKind::TwoStepCertified,
            RbcArg::FastPath => RbcKind::FastPath,
        };
    }
    if let Some(g) = args.gst {
        cfg.gst = g;
    }
    if let Some(d) = args.delta {
        cfg.delay = with_delta(cfg.delay, d);
    }
    if let Some(r) = args.rounds {
        cfg.stop = StopCondition::Round { round: r };
    }
    if let Some(path) = &args.faults {
        let text =
            fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        cfg.faults = serde_json::from_str::<FaultScript>(&text)
            .map_err(|e| format!("parsing {}: {e}", path.display()))?;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.dot.is_some() {
        cfg.dot = args.dot;
    }
    cfg.record_messages |= args.trace;
    cfg.protocol().validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn print_report(report: &ScenarioReport) {
    println!("seed  rounds  committed  lv_mode  tx_mode  bytes  safety  liveness");
    for r in &report.runs {
        let m = &r.metrics;
        let rounds = m.rounds_reached.values().max().copied().unwrap_or(0);
        let committed = m.committed_round.values().max().copied().unwrap_or(0);
        let mode =
            |h: &angelfish::harness::Histogram| h.mode().map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<5} {:<7} {:<10} {:<8} {:<8} {:<6} {:<7} {}",
            r.seed,
            rounds,
            committed,
            mode(&m.lv_commit_latency),
            mode(&m.tx_commit_latency),
            m.total_traffic.bytes,
            if r.safety.is_some() { "FAIL" } else { "ok" },
            if r.liveness.is_some() { "FAIL" } else { "ok" },
        );
    }
    for r in report.safety_failures() {
        eprintln!(
            "seed {}: safety violation: {}",
            r.seed,
            r.safety.as_ref().expect("filtered")
        );
        for line in &r.excerpt {
            eprintln!("  {line}");
        }
    }
    for r in report.liveness_failures() {
        eprintln!(
            "seed {}: liveness: {}",
            r.seed,
            r.liveness.as_ref().expect("filtered")
        );
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run_scenario(&cfg) {
        Ok(report) => {
            print_report(&report);
            ExitCode::from(report.exit_code(args.check.into()) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
