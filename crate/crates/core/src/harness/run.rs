//! Seeded batch execution and artifact export.

use std::fs;
use std::io;
use std::ops::RangeInclusive;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checks::{check_liveness, check_safety, LivenessIssue, SafetyViolation};
use super::config::ScenarioConfig;
use super::metrics::Metrics;
use crate::node::Node;
use crate::sim::{RunTrace, SimError, Simulation};
use crate::types::{PartyId, Round};

/// Which verdicts decide the exit status.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckSet {
    Safety,
    Liveness,
    #[default]
    All,
}

impl CheckSet {
    fn safety(self) -> bool {
        matches!(self, CheckSet::Safety | CheckSet::All)
    }

    fn liveness(self) -> bool {
        matches!(self, CheckSet::Liveness | CheckSet::All)
    }
}

/// One finished run with everything needed for inspection.
pub struct RunOutcome {
    pub seed: u64,
    pub trace: RunTrace,
    pub nodes: Vec<Node>,
    pub metrics: Metrics,
    pub safety: Result<(), SafetyViolation>,
    pub liveness: Result<(), LivenessIssue>,
}

impl RunOutcome {
    /// A few stream entries around a divergence, for error reports.
    pub fn excerpt(&self) -> Vec<String> {
        let Err(SafetyViolation::Divergence { a, b, index, .. }) = &self.safety else {
            return Vec::new();
        };
        let lo = index.saturating_sub(2);
        [*a, *b]
            .iter()
            .flat_map(|p| {
                let s = self.trace.delivered(*p);
                let hi = (index + 3).min(s.len());
                (lo..hi)
                    .map(move |i| format!("{p}[{i}] = {:?}", s[i]))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Runs one seed of `cfg` and applies every checker.
pub fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutcome, SimError> {
    let mut sim = Simulation::new(cfg.sim(seed))?;
    sim.run();
    let (trace, nodes) = sim.into_parts();
    let schedule = cfg.protocol().schedule();
    let safety = check_safety(&trace, &schedule);
    let liveness = check_liveness(&trace);
    let reference = trace.correct().next().map(|p| nodes[p.index()].dag());
    let mut metrics = Metrics::compute(seed, &trace, &schedule, reference);
    metrics.safety = safety.as_ref().err().map(ToString::to_string);
    metrics.liveness = liveness.as_ref().err().map(ToString::to_string);
    Ok(RunOutcome {
        seed,
        trace,
        nodes,
        metrics,
        safety,
        liveness,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics: Metrics,
    pub safety: Option<SafetyViolation>,
    pub liveness: Option<LivenessIssue>,
    pub excerpt: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub runs: Vec<SeedSummary>,
}

impl ScenarioReport {
    pub fn safety_failures(&self) -> impl Iterator<Item = &SeedSummary> {
        self.runs.iter().filter(|r| r.safety.is_some())
    }

    pub fn liveness_failures(&self) -> impl Iterator<Item = &SeedSummary> {
        self.runs.iter().filter(|r| r.liveness.is_some())
    }

    /// 0 when every selected check passed, 2 on a safety violation, 3 on a
    /// liveness issue.
    pub fn exit_code(&self, checks: CheckSet) -> i32 {
        if checks.safety() && self.safety_failures().next().is_some() {
            2
        } else if checks.liveness() && self.liveness_failures().next().is_some() {
            3
        } else {
            0
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("writing artifacts: {0}")]
    Io(#[from] io::Error),
}

/// Runs every seed in parallel. When `cfg.out` is set, writes the config
/// manifest, `metrics.json`, and per seed the message trace and DOT file if
/// requested.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json())?;
    }
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedSummary, ScenarioError> {
            let outcome = run_seed(cfg, seed)?;
            if let Some(dir) = &cfg.out {
                write_seed_artifacts(cfg, &outcome, dir)?;
            }
            Ok(SeedSummary {
                seed,
                excerpt: outcome.excerpt(),
                safety: outcome.safety.err(),
                liveness: outcome.liveness.err(),
                metrics: outcome.metrics,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = ScenarioReport { runs };
    if let Some(dir) = &cfg.out {
        fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    Ok(report)
}

fn write_seed_artifacts(cfg: &ScenarioConfig, o: &RunOutcome, dir: &Path) -> io::Result<()> {
    if cfg.record_messages {
        fs::write(
            dir.join(format!("trace-{}.jsonl", o.seed)),
            o.trace.messages_jsonl(),
        )?;
    }
    if let Some(d) = cfg.dot {
        if let Some(node) = o.nodes.get(d.node.index()) {
            fs::write(
                dir.join(format!("dag-{}-{}.dot", o.seed, d.node.0)),
                export_dot(node, d.from..=d.to),
            )?;
        }
    }
    Ok(())
}

/// The DAG of `node` over `rounds` in Graphviz DOT.
pub fn export_dot(node: &Node, rounds: RangeInclusive<Round>) -> String {
    node.dag().to_dot(rounds)
}

/// Committed leader sequence of `p`, for differential comparisons.
pub fn committed_leaders(trace: &RunTrace, p: PartyId) -> Vec<crate::types::VertexId> {
    trace.commits[p.index()].iter().map(|c| c.leader).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::StopCondition;

    #[test]
    fn batch_writes_artifacts_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::new(4);
        cfg.seeds = vec![1, 2];
        cfg.stop = StopCondition::Round { round: 8 };
        cfg.out = Some(dir.path().to_path_buf());
        cfg.record_messages = true;
        cfg.dot = Some("0:1-3".parse().unwrap());
        let report = run_scenario(&cfg).unwrap();
        assert_eq!(
            report.exit_code(CheckSet::All),
            0,
            "{:?}",
            report.runs.iter().map(|r| &r.liveness).collect::<Vec<_>>()
        );
        for f in [
            "config.json",
            "metrics.json",
            "trace-1.jsonl",
            "dag-2-0.dot",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let line = fs::read_to_string(dir.path().join("trace-1.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["time", "kind", "src", "dst", "round", "digest_prefix"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn metrics_are_reproducible_per_seed() {
        let mut cfg = ScenarioConfig::new(4);
        cfg.stop = StopCondition::Round { round: 8 };
        let a = serde_json::to_string(&run_seed(&cfg, 5).unwrap().metrics).unwrap();
        let b = serde_json::to_string(&run_seed(&cfg, 5).unwrap().metrics).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dag_renders_header_only() {
        let node = Node::new(&ScenarioConfig::new(4).node(), PartyId(0)).unwrap();
        let dot = export_dot(&node, 1..=5);
        assert!(dot.starts_with("digraph"));
        assert!(!dot.contains("->"));
    }
}
