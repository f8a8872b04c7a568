//! Scenario runner: configuration, seeded batches, checkers, metrics and
//! artifact export.

pub mod checks;
pub mod config;
pub mod metrics;
pub mod run;

pub use checks::{check_liveness, check_safety, check_total_order, LivenessIssue, SafetyViolation};
pub use config::{DotRequest, ScenarioConfig};
pub use metrics::{Histogram, Metrics};
pub use run::{
    export_dot, run_scenario, run_seed, CheckSet, RunOutcome, ScenarioError, ScenarioReport,
    SeedSummary,
};
