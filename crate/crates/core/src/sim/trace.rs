//! Everything a run leaves behind for the checkers and metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::codec::MessageKind;
use crate::types::{PartyId, Round, Transaction, VertexId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub vertex: VertexId,
    pub time: u64,
    pub txs: Vec<Transaction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitRecord {
    pub leader: VertexId,
    pub direct: bool,
    pub time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundEntry {
    pub round: Round,
    pub time: u64,
    pub jump: bool,
    pub via_leader: bool,
}

/// A vertex as its creator built it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CreationRecord {
    pub time: u64,
    pub strong_edges: usize,
    /// Strong edges the creator had to wait for before creating it.
    pub required: usize,
    /// Whether the round was entered by the regular rule rather than a jump.
    pub sequential: bool,
    /// The creator had timed out on the previous leader vertex and left it out.
    pub leader_excluded: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub messages: u64,
    pub bytes: u64,
}

/// One transmission, written as a JSON line when message recording is on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    /// Send time.
    pub time: u64,
    pub deliver_at: u64,
    pub kind: MessageKind,
    pub src: PartyId,
    pub dst: PartyId,
    pub round: Round,
    pub len: usize,
    pub digest_prefix: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The configured stop condition was met.
    Reached,
    /// The virtual-time cap was hit first.
    TimeCap,
    /// No live honest party entered a round for a whole livelock window after GST.
    Stalled,
    /// The event queue emptied before the stop condition.
    Drained,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub n: usize,
    pub f: usize,
    pub delta: u64,
    pub gst: u64,
    pub byzantine: BTreeSet<PartyId>,
    pub crashed: BTreeMap<PartyId, u64>,
    pub deliveries: Vec<Vec<DeliveryRecord>>,
    pub commits: Vec<Vec<CommitRecord>>,
    pub entries: Vec<Vec<RoundEntry>>,
    /// Every vertex created by any party, Byzantine ones included.
    pub created: BTreeMap<VertexId, CreationRecord>,
    /// Rounds for which some honest party stored a timeout certificate.
    pub tc_rounds: BTreeSet<Round>,
    pub traffic: BTreeMap<(Round, MessageKind), Traffic>,
    /// Vertices rejected by honest parties.
    pub rejections: u64,
    pub equivocations: u64,
    pub decode_errors: u64,
    /// Highest round entered by a live honest party when GST was reached.
    pub gst_round: Option<Round>,
    pub end_time: u64,
    pub stop: StopReason,
    pub messages: Vec<MessageRecord>,
}

impl RunTrace {
    pub(crate) fn new(n: usize, f: usize, delta: u64, gst: u64) -> Self {
        Self {
            n,
            f,
            delta,
            gst,
            byzantine: BTreeSet::new(),
            crashed: BTreeMap::new(),
            deliveries: vec![Vec::new(); n],
            commits: vec![Vec::new(); n],
            entries: vec![Vec::new(); n],
            created: BTreeMap::new(),
            tc_rounds: BTreeSet::new(),
            traffic: BTreeMap::new(),
            rejections: 0,
            equivocations: 0,
            decode_errors: 0,
            gst_round: None,
            end_time: 0,
            stop: StopReason::Drained,
            messages: Vec::new(),
        }
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.n).map(PartyId::from)
    }

    pub fn is_honest(&self, p: PartyId) -> bool {
        !self.byzantine.contains(&p)
    }

    /// Honest and never crashed during the run.
    pub fn is_correct(&self, p: PartyId) -> bool {
        self.is_honest(p) && !self.crashed.contains_key(&p)
    }

    pub fn honest(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.parties().filter(|p| self.is_honest(*p))
    }

    pub fn correct(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.parties().filter(|p| self.is_correct(*p))
    }

    /// The ordered `a_deliver` stream of `p` as vertex ids.
    pub fn delivered(&self, p: PartyId) -> Vec<VertexId> {
        self.deliveries[p.index()]
            .iter()
            .map(|d| d.vertex)
            .collect()
    }

    /// Highest round entered by `p`.
    pub fn final_round(&self, p: PartyId) -> Round {
        self.entries[p.index()]
            .iter()
            .map(|e| e.round)
            .max()
            .unwrap_or(0)
    }

    /// Time at which `p` entered `round`, if it did.
    pub fn entry_time(&self, p: PartyId, round: Round) -> Option<u64> {
        self.entries[p.index()]
            .iter()
            .find(|e| e.round == round)
            .map(|e| e.time)
    }

    /// Earliest time any honest party delivered `v`.
    pub fn first_delivery(&self, v: &VertexId) -> Option<u64> {
        self.honest()
            .filter_map(|p| {
                self.deliveries[p.index()]
                    .iter()
                    .find(|d| d.vertex == *v)
                    .map(|d| d.time)
            })
            .min()
    }

    pub fn total_traffic(&self) -> Traffic {
        self.traffic
            .values()
            .fold(Traffic::default(), |a, t| Traffic {
                messages: a.messages + t.messages,
                bytes: a.bytes + t.bytes,
            })
    }

    /// Traffic summed over every message kind, per round.
    pub fn traffic_by_round(&self) -> BTreeMap<Round, Traffic> {
        let mut out: BTreeMap<Round, Traffic> = BTreeMap::new();
        for ((r, _), t) in &self.traffic {
            let e = out.entry(*r).or_default();
            e.messages += t.messages;
            e.bytes += t.bytes;
        }
        out
    }

    /// The message records as newline-delimited JSON.
    pub fn messages_jsonl(&self) -> String {
        let mut s = String::new();
        for m in &self.messages {
            s.push_str(&serde_json::to_string(m).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}
