//! Scenario description parsed from JSON.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::NodeConfig;
use crate::sim::{DelayModel, FaultScript, SimConfig, StopCondition};
use crate::types::{PartyId, ProtocolConfig, ProtocolMode, RbcKind, Round};

/// A batch of seeded runs sharing one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Defaults to the largest `f` with `n > 3f`.
    #[serde(default)]
    pub f: Option<usize>,
    #[serde(default = "default_tau")]
    pub timeout_tau: u64,
    #[serde(default = "default_rbc")]
    pub rbc: RbcKind,
    #[serde(default)]
    pub mode: ProtocolMode,
    #[serde(default = "one")]
    pub leaders_per_round: usize,
    #[serde(default = "full_rate")]
    pub propose_rate: f64,
    #[serde(default)]
    pub leader_schedule_seed: u64,
    #[serde(default)]
    pub proposer_seed: u64,
    #[serde(default = "one")]
    pub tx_per_vertex: usize,
    /// Zero bytes appended to every block.
    #[serde(default)]
    pub filler_bytes: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_delay")]
    pub delay: DelayModel,
    #[serde(default)]
    pub gst: u64,
    #[serde(default)]
    pub faults: FaultScript,
    #[serde(default = "default_stop")]
    pub stop: StopCondition,
    #[serde(default = "default_max_time")]
    pub max_time: u64,
    /// Directory for metrics, traces and DOT files.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Write a line-delimited JSON message trace per seed.
    #[serde(default)]
    pub record_messages: bool,
    #[serde(default)]
    pub dot: Option<DotRequest>,
}

/// Which party's DAG to render and over which rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DotRequest {
    pub node: PartyId,
    pub from: Round,
    pub to: Round,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DotParseError {
    #[error("expected NODE:FROM-TO, got {0:?}")]
    Shape(String),
    #[error("invalid number in {0:?}")]
    Number(String),
}

impl std::str::FromStr for DotRequest {
    type Err = DotParseError;

    /// Parses `NODE:FROM-TO` or `NODE:ROUND`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, range) = s
            .split_once(':')
            .ok_or_else(|| DotParseError::Shape(s.to_owned()))?;
        let num = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| DotParseError::Number(s.to_owned()))
        };
        let (from, to) = match range.split_once('-') {
            Some((a, b)) => (num(a)?, num(b)?),
            None => {
                let r = num(range)?;
                (r, r)
            }
        };
        if from > to {
            return Err(DotParseError::Shape(s.to_owned()));
        }
        Ok(DotRequest {
            node: PartyId(num(node)? as u32),
            from,
            to,
        })
    }
}

fn default_tau() -> u64 {
    4
}

fn default_rbc() -> RbcKind {
    RbcKind::Bracha
}

fn one() -> usize {
    1
}

fn full_rate() -> f64 {
    1.0
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_delay() -> DelayModel {
    DelayModel::Jitter { min: 1, max: 2 }
}

fn default_stop() -> StopCondition {
    StopCondition::Round { round: 20 }
}

fn default_max_time() -> u64 {
    100_000
}

impl ScenarioConfig {
    /// A single-leader scenario with every optional field at its default.
    pub fn new(n: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "n": n })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            n: self.n,
            f: self.f.unwrap_or((self.n.max(1) - 1) / 3),
            timeout_tau: self.timeout_tau,
            rbc_kind: self.rbc,
            leader_schedule_seed: self.leader_schedule_seed,
            leaders_per_round: self.leaders_per_round,
            propose_rate: self.propose_rate,
            mode: self.mode,
        }
    }

    pub fn node(&self) -> NodeConfig {
        NodeConfig {
            protocol: self.protocol(),
            txs_per_vertex: self.tx_per_vertex,
            filler_bytes: self.filler_bytes,
            proposer_seed: self.proposer_seed,
        }
    }

    pub fn sim(&self, seed: u64) -> SimConfig {
        SimConfig {
            node: self.node(),
            delay: self.delay,
            gst: self.gst,
            faults: self.faults.clone(),
            stop: self.stop,
            max_time: self.max_time,
            seed,
            record_messages: self.record_messages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let c = ScenarioConfig::from_json(r#"{"n": 7}"#).unwrap();
        assert_eq!(c.protocol().f, 2);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.stop, StopCondition::Round { round: 20 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"n": 4, "bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(
            r#"{"n": 4, "delay": {"kind": "fixed", "delta": 1, "x": 2}}"#
        )
        .is_err());
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"{
            "n": 4, "rbc": "two_step", "mode": "multi", "leaders_per_round": 2,
            "seeds": [1, 2], "delay": {"kind": "adversarial", "min": 1, "max": 2}, "gst": 50,
            "faults": {"crashes": [{"party": 3, "at": 10}], "byzantine": {"1": "equivocate_vertex"}},
            "stop": {"kind": "rounds_after_gst", "rounds": 20}, "dot": {"node": 0, "from": 1, "to": 5}
        }"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.sim(2).seed, 2);
    }

    #[test]
    fn dot_requests_parse() {
        assert_eq!(
            "2:3-7".parse::<DotRequest>().unwrap(),
            DotRequest {
                node: PartyId(2),
                from: 3,
                to: 7
            }
        );
        assert_eq!(
            "0:4".parse::<DotRequest>().unwrap(),
            DotRequest {
                node: PartyId(0),
                from: 4,
                to: 4
            }
        );
        assert!("0:7-3".parse::<DotRequest>().is_err());
        assert!("x".parse::<DotRequest>().is_err());
    }
}
