//! Deterministic discrete-event network simulator.
//!
//! Events are ordered by time, then crashes before deliveries before timers,
//! then insertion sequence, so a run depends only on its configuration and
//! seed. Each delay is drawn from a generator keyed by the seed, the
//! endpoints, the send time and the encoded message, so a transmission gets
//! the same delay in two runs that differ elsewhere. Every message crosses
//! the wire in its canonical encoding and is decoded by the receiver; the
//! encoded length is what the traffic accounting charges. Messages a party
//! sends to itself are delivered at the same instant and are not charged.

mod delay;
mod fault;
mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::hash::{Hash, Hasher};

use bytes::Bytes;
use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

pub use delay::DelayModel;
pub use fault::{Behavior, Crash, FaultScript};
pub use trace::{
    CommitRecord, CreationRecord, DeliveryRecord, MessageRecord, RoundEntry, RunTrace, StopReason,
    Traffic,
};

use crate::broadcast::Dest;
use crate::codec::{decode_message, encode_message, Message};
use crate::crypto::Keyring;
use crate::node::{Node, NodeConfig, NodeEvent, Output};
use crate::types::{ConfigError, Digest, PartyId, Round};

/// When a run ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopCondition {
    /// Virtual time `at` is reached.
    Time { at: u64 },
    /// Every live honest party has entered `round`.
    Round { round: Round },
    /// Every live honest party has committed a leader of `round` or later.
    Committed { round: Round },
    /// Every live honest party has entered the round `rounds` after the
    /// highest round reached at GST.
    RoundsAfterGst { rounds: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub node: NodeConfig,
    pub delay: DelayModel,
    #[serde(default)]
    pub gst: u64,
    #[serde(default)]
    pub faults: FaultScript,
    pub stop: StopCondition,
    /// Hard cap on virtual time.
    #[serde(default = "default_max_time")]
    pub max_time: u64,
    #[serde(default)]
    pub seed: u64,
    /// Keep a record of every transmission (memory grows with traffic).
    #[serde(default)]
    pub record_messages: bool,
}

fn default_max_time() -> u64 {
    100_000
}

impl SimConfig {
    pub fn new(node: NodeConfig, delay: DelayModel, stop: StopCondition) -> Self {
        Self {
            node,
            delay,
            gst: 0,
            faults: FaultScript::none(),
            stop,
            max_time: default_max_time(),
            seed: 0,
            record_messages: false,
        }
    }

    /// Length of the post-GST window without any honest round entry after
    /// which a run is declared stalled.
    pub fn livelock_window(&self) -> u64 {
        let delta = self.delay.max_delay();
        (10 * delta).max(self.node.protocol.timeout_tau * 5 / 2 + 4 * delta)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("delay model {0:?} is not valid")]
    Delay(DelayModel),
    #[error("{faulty} faulty parties exceed f = {f}")]
    TooManyFaults { faulty: usize, f: usize },
    #[error("fault script names {0}, which is not a party")]
    UnknownParty(PartyId),
}

#[derive(Debug)]
enum Event {
    Start(PartyId),
    Crash(PartyId),
    Timer {
        party: PartyId,
        round: Round,
    },
    Deliver {
        from: PartyId,
        to: PartyId,
        bytes: Bytes,
    },
}

impl Event {
    /// Order among events of the same instant: crashes take effect first and
    /// timers fire only after every message due at that instant arrived.
    fn class(&self) -> u8 {
        match self {
            Event::Crash(_) => 0,
            Event::Start(_) | Event::Deliver { .. } => 1,
            Event::Timer { .. } => 2,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: u64,
    class: u8,
    seq: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (u64, u8, u64) {
        (self.time, self.class, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

pub struct Simulation {
    cfg: SimConfig,
    nodes: Vec<Node>,
    keys: Keyring,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: u64,
    down: Vec<bool>,
    rounds: Vec<Round>,
    last_entry: u64,
    trace: RunTrace,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let p = &cfg.node.protocol;
        p.validate()?;
        if !cfg.delay.is_valid() {
            return Err(SimError::Delay(cfg.delay));
        }
        let faulty = cfg.faults.faulty();
        if let Some(bad) = faulty.iter().find(|q| q.index() >= p.n) {
            return Err(SimError::UnknownParty(*bad));
        }
        if faulty.len() > p.f {
            return Err(SimError::TooManyFaults {
                faulty: faulty.len(),
                f: p.f,
            });
        }
        let nodes = (0..p.n)
            .map(|i| Node::new(&cfg.node, PartyId::from(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut trace = RunTrace::new(p.n, p.f, cfg.delay.max_delay(), cfg.gst);
        trace.byzantine = cfg.faults.byzantine.keys().copied().collect();
        let mut sim = Self {
            keys: Keyring::new(p.n),
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            down: vec![false; p.n],
            rounds: vec![0; p.n],
            last_entry: 0,
            trace,
            cfg,
        };
        for c in sim.cfg.faults.crashes.clone() {
            sim.schedule(c.at, Event::Crash(c.party));
        }
        for i in 0..sim.nodes.len() {
            sim.schedule(0, Event::Start(PartyId::from(i)));
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, p: PartyId) -> &Node {
        &self.nodes[p.index()]
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn into_parts(self) -> (RunTrace, Vec<Node>) {
        (self.trace, self.nodes)
    }

    /// Runs until the stop condition, the time cap, a stall or an empty queue.
    pub fn run(&mut self) -> &RunTrace {
        self.trace.stop = loop {
            if self.reached() {
                break StopReason::Reached;
            }
            let Some(Reverse(next)) = self.queue.pop() else {
                break StopReason::Drained;
            };
            if next.time > self.cfg.max_time {
                break StopReason::TimeCap;
            }
            if next.time >= self.cfg.gst && self.trace.gst_round.is_none() {
                self.trace.gst_round = Some(
                    self.live_honest()
                        .map(|p| self.rounds[p.index()])
                        .max()
                        .unwrap_or(0),
                );
            }
            let since = self.last_entry.max(self.cfg.gst);
            if next.time > since + self.cfg.livelock_window() {
                debug!(
                    time = next.time,
                    since, "no honest round entry within the livelock window"
                );
                break StopReason::Stalled;
            }
            self.now = next.time;
            self.handle(next.event);
        };
        self.trace.end_time = self.now;
        &self.trace
    }

    fn live_honest(&self) -> impl Iterator<Item = PartyId> + '_ {
        (0..self.nodes.len())
            .map(PartyId::from)
            .filter(|p| !self.down[p.index()] && self.trace.is_honest(*p))
    }

    fn reached(&self) -> bool {
        let min_round = || {
            self.live_honest()
                .map(|p| self.rounds[p.index()])
                .min()
                .unwrap_or(0)
        };
        match self.cfg.stop {
            StopCondition::Time { at } => self.queue.peek().is_some_and(|Reverse(s)| s.time > at),
            StopCondition::Round { round } => min_round() >= round,
            StopCondition::Committed { round } => {
                self.live_honest()
                    .map(|p| self.nodes[p.index()].committed_round())
                    .min()
                    .unwrap_or(0)
                    >= round
            }
            StopCondition::RoundsAfterGst { rounds } => self
                .trace
                .gst_round
                .is_some_and(|g| min_round() >= g + rounds),
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            time,
            class: event.class(),
            seq: self.seq,
            event,
        }));
    }

    fn handle(&mut self, event: Event) {
        let (p, outputs) = match event {
            Event::Crash(p) => {
                self.down[p.index()] = true;
                self.trace.crashed.insert(p, self.now);
                return;
            }
            Event::Start(p) => (p, self.nodes[p.index()].start(self.now)),
            Event::Timer { party, round } => {
                (party, self.nodes[party.index()].on_timer(round, self.now))
            }
            Event::Deliver { from, to, bytes } => match decode_message(&bytes) {
                Ok(msg) => (to, self.nodes[to.index()].on_message(from, msg, self.now)),
                Err(_) => {
                    self.trace.decode_errors += 1;
                    return;
                }
            },
        };
        if self.down[p.index()] {
            return;
        }
        self.apply(p, outputs);
    }

    fn apply(&mut self, p: PartyId, outputs: Vec<Output>) {
        let behavior = self.cfg.faults.byzantine.get(&p).copied();
        let honest = behavior.is_none();
        for out in outputs {
            match out {
                Output::Send { dest, msg } => {
                    let dests = match dest {
                        Dest::All => (0..self.nodes.len()).map(PartyId::from).collect(),
                        Dest::One(q) => vec![q],
                    };
                    match behavior {
                        None => self.transmit(p, &dests, &msg),
                        Some(b) => {
                            let (n, f) = (self.trace.n, self.trace.f);
                            for (dests, msg) in fault::transform(b, p, n, f, &self.keys, dests, msg)
                            {
                                self.transmit(p, &dests, &msg);
                            }
                        }
                    }
                }
                Output::SetTimer { round, at } => {
                    self.schedule(at.max(self.now), Event::Timer { party: p, round })
                }
                Output::Deliver { vertex, block } => {
                    self.trace.deliveries[p.index()].push(DeliveryRecord {
                        vertex,
                        time: self.now,
                        txs: block.txs,
                    })
                }
                Output::Commit { leader, direct } => {
                    self.trace.commits[p.index()].push(CommitRecord {
                        leader,
                        direct,
                        time: self.now,
                    })
                }
                Output::Event(e) => self.record_event(p, honest, behavior, e),
            }
        }
    }

    fn record_event(&mut self, p: PartyId, honest: bool, behavior: Option<Behavior>, e: NodeEvent) {
        match e {
            NodeEvent::RoundEntered {
                round,
                jump,
                via_leader,
            } => {
                self.trace.entries[p.index()].push(RoundEntry {
                    round,
                    time: self.now,
                    jump,
                    via_leader,
                });
                self.rounds[p.index()] = self.rounds[p.index()].max(round);
                if honest {
                    self.last_entry = self.now;
                }
                if behavior == Some(Behavior::PrematureVote) {
                    let vote = fault::premature_vote(p, &self.keys, round + 1);
                    let all: Vec<PartyId> = (0..self.nodes.len()).map(PartyId::from).collect();
                    self.transmit(p, &all, &vote);
                }
            }
            NodeEvent::VertexCreated {
                id,
                strong_edges,
                required,
                sequential,
                leader_excluded,
            } => {
                self.trace.created.insert(
                    id,
                    CreationRecord {
                        time: self.now,
                        strong_edges,
                        required,
                        sequential,
                        leader_excluded,
                    },
                );
            }
            NodeEvent::TcStored { round } if honest => {
                self.trace.tc_rounds.insert(round);
            }
            NodeEvent::Rejected { .. } if honest => self.trace.rejections += 1,
            NodeEvent::Equivocation { .. } if honest => self.trace.equivocations += 1,
            _ => {}
        }
    }

    fn delay(&self, key: &FxHasher, to: PartyId) -> u64 {
        let mut h = key.clone();
        to.hash(&mut h);
        let mut rng = Pcg64Mcg::seed_from_u64(h.finish());
        self.cfg.delay.sample(self.now, self.cfg.gst, &mut rng)
    }

    fn transmit(&mut self, from: PartyId, dests: &[PartyId], msg: &Message) {
        let bytes = encode_message(msg);
        let (kind, round) = (msg.kind(), msg.round());
        let digest = self.cfg.record_messages.then(|| Digest::of(&bytes).short());
        let unique: BTreeSet<PartyId> = dests.iter().copied().collect();
        let mut key = FxHasher::default();
        (self.cfg.seed, from, self.now, &bytes[..]).hash(&mut key);
        for to in unique {
            let delay = if to == from { 0 } else { self.delay(&key, to) };
            if to != from {
                let t = self.trace.traffic.entry((round, kind)).or_default();
                t.messages += 1;
                t.bytes += bytes.len() as u64;
            }
            if let Some(d) = &digest {
                self.trace.messages.push(MessageRecord {
                    time: self.now,
                    deliver_at: self.now + delay,
                    kind,
                    src: from,
                    dst: to,
                    round,
                    len: bytes.len(),
                    digest_prefix: d.clone(),
                });
            }
            if self.down[to.index()] {
                continue;
            }
            self.schedule(
                self.now + delay,
                Event::Deliver {
                    from,
                    to,
                    bytes: bytes.clone(),
                },
            );
        }
    }
}

/// Builds and runs a simulation in one call.
pub fn simulate(cfg: SimConfig) -> Result<(RunTrace, Vec<Node>), SimError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run();
    Ok(sim.into_parts())
}
