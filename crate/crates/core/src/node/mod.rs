//! Per-party protocol state machine.
//!
//! [`Node`] is sans-IO. Every handler takes the current virtual time and
//! returns [`Output`]s: messages to transmit, timer requests, commits and the
//! ordered `a_deliver` stream. Conditions the protocol phrases as "wait until"
//! are guards re-evaluated after each input, so handlers never block.
//!
//! The same machine runs single-leader and multi-leader mode. Multi-leader
//! specifics (vote rebroadcast, no-votes, prefix rules for the main leader
//! vertex) live in the `multileader` submodule.

mod multileader;

use std::collections::{btree_map, BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, trace};

use crate::broadcast::{Dest, RbcEngine, RbcEvent};
use crate::codec::{decode_vertex_with_digest, encode_vertex, DecodeError, Message};
use crate::crypto::{AggregateSignature, Keyring};
use crate::dag::{AddOutcome, DagStore};
use crate::schedule::{LeaderSchedule, ProposerPolicy};
use crate::types::{
    timeout_signing_bytes, Block, CertRole, CertVariant, ConfigError, Digest, NoVoteCertificate,
    PartyId, ProtocolConfig, Round, StructureError, TimeoutCertificate, TimeoutMessage,
    Transaction, Vertex, VertexDraft, VertexId, Vote, VoteCertificate, VoteContent,
};

/// Per-node settings beyond the shared protocol configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub protocol: ProtocolConfig,
    /// Synthetic transactions placed in each vertex when no block is queued.
    #[serde(default = "one_tx")]
    pub txs_per_vertex: usize,
    /// Zero bytes appended to every block on the wire.
    #[serde(default)]
    pub filler_bytes: u32,
    /// Seed of the proposer policy shared by all parties.
    #[serde(default)]
    pub proposer_seed: u64,
}

fn one_tx() -> usize {
    1
}

impl NodeConfig {
    pub fn new(protocol: ProtocolConfig) -> Self {
        Self {
            protocol,
            txs_per_vertex: 1,
            filler_bytes: 0,
            proposer_seed: 0,
        }
    }
}

/// Why a delivered vertex was not accepted into the DAG.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RejectReason {
    #[error("undecodable payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("payload claims ({round}, {party}) but arrived on another instance")]
    InstanceMismatch { round: Round, party: PartyId },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("timeout certificate for round {0} does not verify")]
    BadTc(Round),
    #[error("leader edge {0:?} does not target a leader vertex")]
    LeaderEdgeTarget(VertexId),
    #[error("leader edges of round {0} are not a prefix of its leader list")]
    NotPrefix(Round),
    #[error("missing no-vote certificate for {target} in round {round}")]
    MissingNvc { round: Round, target: PartyId },
    #[error("no-vote certificate does not justify the first unreferenced leader")]
    BadNvc,
    #[error("no-vote certificate present although every leader is referenced")]
    UnexpectedNvc,
}

/// Observable state changes, consumed by traces and tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeEvent {
    RoundEntered {
        round: Round,
        jump: bool,
        via_leader: bool,
    },
    VertexCreated {
        id: VertexId,
        strong_edges: usize,
        required: usize,
        sequential: bool,
        leader_excluded: bool,
    },
    VoteCreated {
        round: Round,
        edges: usize,
    },
    TimeoutSent {
        round: Round,
    },
    TcStored {
        round: Round,
    },
    NvcStored {
        round: Round,
        target: PartyId,
    },
    Rejected {
        sender: PartyId,
        round: Round,
        reason: RejectReason,
    },
    Equivocation {
        sender: PartyId,
        round: Round,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Send {
        dest: Dest,
        msg: Message,
    },
    /// Request a call to [`Node::on_timer`] with `round` at virtual time `at`.
    SetTimer {
        round: Round,
        at: u64,
    },
    /// The next entry of the totally ordered `a_deliver` stream.
    Deliver {
        vertex: VertexId,
        block: Block,
    },
    Commit {
        leader: VertexId,
        direct: bool,
    },
    Event(NodeEvent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pending {
    round: Round,
    /// Entered by the regular rule rather than by jumping.
    sequential: bool,
}

/// Where a leader vertex anchors its leader path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Anchor {
    /// Strong edge to the previous main leader vertex.
    Strong(Round),
    /// Leader edge to the main leader vertex of this round.
    Edge(Round),
    /// No earlier main leader vertex is referenced at all.
    Genesis,
}

enum Plan {
    Ready {
        leader_edges: BTreeSet<VertexId>,
        tcs: Vec<TimeoutCertificate>,
        nvc: Option<NoVoteCertificate>,
    },
    Wait,
    /// The previous leader vertex was delivered after this party timed out on
    /// it and the certificate chain may never form: send a vote instead.
    Abstain,
}

/// One party running Angelfish (or multi-leader Angelfish).
#[derive(Debug)]
pub struct Node {
    cfg: ProtocolConfig,
    txs_per_vertex: usize,
    filler_bytes: u32,
    me: PartyId,
    schedule: LeaderSchedule,
    policy: ProposerPolicy,
    keys: Keyring,
    rbc: RbcEngine,
    dag: DagStore,
    round: Round,
    started: bool,
    now: u64,
    pending: Option<Pending>,
    round_votes: BTreeMap<Round, BTreeMap<PartyId, VoteContent>>,
    vertex_proposers: BTreeMap<Round, BTreeSet<PartyId>>,
    /// Strong edges of round-r vertices, taken from the first RBC message.
    first_messages: BTreeMap<Round, BTreeMap<PartyId, BTreeSet<VertexId>>>,
    /// Vertices decoded at their first RBC message, awaiting delivery.
    decoded: BTreeMap<(Round, PartyId, Digest), Vertex>,
    timeout_sent: BTreeSet<Round>,
    timeouts: BTreeMap<Round, BTreeSet<PartyId>>,
    tcs: BTreeMap<Round, TimeoutCertificate>,
    tc_forwarded: BTreeSet<Round>,
    no_votes: BTreeMap<(Round, PartyId), BTreeSet<PartyId>>,
    nvcs: BTreeMap<(Round, PartyId), NoVoteCertificate>,
    forwarded_votes: BTreeSet<(Round, PartyId)>,
    cvc_sent: BTreeSet<Round>,
    committed_round: Round,
    /// Number of leaders of each round committed so far, in list order.
    committed_prefix: BTreeMap<Round, usize>,
    leader_stack: Vec<Vec<VertexId>>,
    commit_dirty: BTreeSet<Round>,
    blocks: VecDeque<Block>,
    tx_counter: u64,
    out: Vec<Output>,
}

impl Node {
    pub fn new(config: &NodeConfig, me: PartyId) -> Result<Self, ConfigError> {
        let cfg = config.protocol.clone();
        cfg.validate()?;
        let schedule = cfg.schedule();
        Ok(Self {
            txs_per_vertex: config.txs_per_vertex,
            filler_bytes: config.filler_bytes,
            me,
            policy: ProposerPolicy::new(cfg.propose_rate, config.proposer_seed),
            keys: Keyring::new(cfg.n),
            rbc: RbcEngine::new(me, cfg.n, cfg.f, cfg.rbc_kind),
            dag: DagStore::new(schedule.clone()),
            schedule,
            round: 0,
            started: false,
            now: 0,
            pending: None,
            round_votes: BTreeMap::new(),
            vertex_proposers: BTreeMap::new(),
            first_messages: BTreeMap::new(),
            decoded: BTreeMap::new(),
            timeout_sent: BTreeSet::new(),
            timeouts: BTreeMap::new(),
            tcs: BTreeMap::new(),
            tc_forwarded: BTreeSet::new(),
            no_votes: BTreeMap::new(),
            nvcs: BTreeMap::new(),
            forwarded_votes: BTreeSet::new(),
            cvc_sent: BTreeSet::new(),
            committed_round: 0,
            committed_prefix: BTreeMap::new(),
            leader_stack: Vec::new(),
            commit_dirty: BTreeSet::new(),
            blocks: VecDeque::new(),
            tx_counter: 0,
            out: Vec::new(),
            cfg,
        })
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &LeaderSchedule {
        &self.schedule
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn committed_round(&self) -> Round {
        self.committed_round
    }

    /// Number of leaders of round `r` committed so far.
    pub fn committed_prefix(&self, r: Round) -> usize {
        self.committed_prefix.get(&r).copied().unwrap_or(0)
    }

    pub fn dag(&self) -> &DagStore {
        &self.dag
    }

    pub fn rbc(&self) -> &RbcEngine {
        &self.rbc
    }

    pub fn tc(&self, r: Round) -> Option<&TimeoutCertificate> {
        self.tcs.get(&r)
    }

    pub fn nvc(&self, r: Round, target: PartyId) -> Option<&NoVoteCertificate> {
        self.nvcs.get(&(r, target))
    }

    pub fn timeout_sent(&self, r: Round) -> bool {
        self.timeout_sent.contains(&r)
    }

    /// Round whose vertex is waiting to be created, if any.
    pub fn pending_round(&self) -> Option<Round> {
        self.pending.map(|p| p.round)
    }

    /// Signers of the recorded round-`r` votes.
    pub fn round_voters(&self, r: Round) -> Vec<PartyId> {
        self.round_votes
            .get(&r)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn vertex_proposers(&self, r: Round) -> usize {
        self.vertex_proposers.get(&r).map_or(0, BTreeSet::len)
    }

    /// Distinct parties with a delivered round-`r` vertex or a recorded
    /// round-`r` vote; each party counts once.
    pub fn round_support(&self, r: Round) -> usize {
        let voters_only = self.round_votes.get(&r).map_or(0, |votes| {
            votes
                .keys()
                .filter(|p| self.dag.get_vertex(**p, r).is_none())
                .count()
        });
        self.dag.round_len(r) + voters_only
    }

    /// Enqueues a block for a later vertex of this party.
    pub fn a_bcast(&mut self, block: Block) {
        self.blocks.push_back(block);
    }

    /// Enters round 1.
    pub fn start(&mut self, now: u64) -> Vec<Output> {
        self.now = now;
        if !self.started {
            self.started = true;
            self.enter_round(1, true);
            self.progress();
        }
        std::mem::take(&mut self.out)
    }

    pub fn on_message(&mut self, from: PartyId, msg: Message, now: u64) -> Vec<Output> {
        self.now = now;
        if from.index() >= self.cfg.n {
            return Vec::new();
        }
        match msg {
            Message::Rbc(m) => self.on_rbc(from, m),
            Message::Vote(v) => self.on_vote(v),
            Message::Timeout(t) => self.on_timeout_message(t),
            Message::Tc(tc) => self.on_tc(tc),
            Message::VoteCert(c) => self.on_vote_certificate(c),
            Message::NoVote(m) => self.on_no_vote(m),
            Message::Nvc(c) => self.on_nvc(c),
        }
        if self.started {
            self.progress();
        }
        std::mem::take(&mut self.out)
    }

    /// Timer expiry for `round`. Stale timers are ignored.
    pub fn on_timer(&mut self, round: Round, now: u64) -> Vec<Output> {
        self.now = now;
        if round == self.round
            && self.dag.get_leader_vertex(round).is_none()
            && self.timeout_sent.insert(round)
        {
            let sig = self
                .keys
                .sign(self.me, &timeout_signing_bytes(round))
                .expect("own index is valid");
            self.emit(NodeEvent::TimeoutSent { round });
            self.send(
                Dest::All,
                Message::Timeout(TimeoutMessage {
                    round,
                    source: self.me,
                    sig,
                }),
            );
        }
        std::mem::take(&mut self.out)
    }

    fn emit(&mut self, e: NodeEvent) {
        self.out.push(Output::Event(e));
    }

    fn send(&mut self, dest: Dest, msg: Message) {
        self.out.push(Output::Send { dest, msg });
    }

    fn quorum(&self) -> usize {
        self.cfg.quorum()
    }

    fn is_multi(&self) -> bool {
        self.cfg.is_multi()
    }

    fn leader_vertex_delivered(&self, r: Round) -> bool {
        self.dag.get_leader_vertex(r).is_some()
    }

    // ---------------------------------------------------------------- inputs

    fn on_rbc(&mut self, from: PartyId, msg: crate::codec::RbcMessage) {
        let out = self.rbc.on_message(from, msg);
        for (dest, m) in out.sends {
            self.send(dest, Message::Rbc(m));
        }
        for ev in out.events {
            match ev {
                RbcEvent::FirstMessage {
                    sender,
                    round,
                    digest,
                    payload,
                } => self.on_first_message(sender, round, digest, &payload),
                RbcEvent::Delivered {
                    sender,
                    round,
                    digest,
                    payload,
                } => self.on_delivered(sender, round, digest, &payload),
                RbcEvent::Equivocation { sender, round } => {
                    self.emit(NodeEvent::Equivocation { sender, round })
                }
            }
        }
    }

    fn decode_instance(
        &self,
        sender: PartyId,
        round: Round,
        digest: Digest,
        payload: &[u8],
    ) -> Result<Vertex, RejectReason> {
        let v = decode_vertex_with_digest(payload, digest)?;
        if v.source() != sender || v.round() != round {
            return Err(RejectReason::InstanceMismatch {
                round: v.round(),
                party: v.source(),
            });
        }
        v.check_structure(&self.schedule)?;
        Ok(v)
    }

    fn on_first_message(&mut self, sender: PartyId, round: Round, digest: Digest, payload: &[u8]) {
        let Ok(v) = self.decode_instance(sender, round, digest, payload) else {
            return;
        };
        self.first_messages
            .entry(round)
            .or_default()
            .insert(sender, v.strong_edges().clone());
        self.decoded.insert((round, sender, digest), v);
        if round > 1 {
            self.commit_dirty.insert(round - 1);
        }
    }

    fn on_delivered(&mut self, sender: PartyId, round: Round, digest: Digest, payload: &[u8]) {
        let cached = self.decoded.remove(&(round, sender, digest)).map(Ok);
        let v = match cached.unwrap_or_else(|| self.decode_instance(sender, round, digest, payload))
        {
            Ok(v) => v,
            Err(reason) => {
                return self.emit(NodeEvent::Rejected {
                    sender,
                    round,
                    reason,
                })
            }
        };
        if v.source() == self.schedule.leader_of(round) {
            if let Err(reason) = self.is_valid(&v) {
                debug!(me = %self.me, %sender, round, %reason, "rejecting leader vertex");
                return self.emit(NodeEvent::Rejected {
                    sender,
                    round,
                    reason,
                });
            }
        }
        if v.propose() {
            self.vertex_proposers
                .entry(round)
                .or_default()
                .insert(sender);
        }
        self.add_to_dag(v);
    }

    fn add_to_dag(&mut self, v: Vertex) {
        match self.dag.try_add_to_dag(v) {
            AddOutcome::Inserted(ids) => {
                for id in ids {
                    if self.schedule.is_leader(id.round, id.source) {
                        self.commit_dirty.insert(id.round);
                    }
                }
            }
            AddOutcome::Conflict | AddOutcome::Buffered | AddOutcome::Duplicate => {}
        }
    }

    /// Leader-vertex validity. Depends only on the vertex itself, so every
    /// honest party reaches the same verdict.
    pub fn is_valid(&self, v: &Vertex) -> Result<(), RejectReason> {
        for tc in v.tcs() {
            if !self.valid_tc(tc) {
                return Err(RejectReason::BadTc(tc.round));
            }
        }
        if self.is_multi() {
            return self.check_multi_leader_vertex(v);
        }
        for e in v.leader_edges() {
            if e.source != self.schedule.leader_of(e.round) {
                return Err(RejectReason::LeaderEdgeTarget(*e));
            }
        }
        Ok(())
    }

    fn valid_tc(&self, tc: &TimeoutCertificate) -> bool {
        tc.agg.len() >= self.quorum()
            && self
                .keys
                .verify_aggregate(&tc.agg, &timeout_signing_bytes(tc.round))
    }

    /// Records one signer's vote content for its round. The first content per
    /// signer wins, so a party is counted at most once.
    fn record_vote(&mut self, signer: PartyId, content: VoteContent) -> bool {
        let round = content.round;
        let votes = self.round_votes.entry(round).or_default();
        if votes.contains_key(&signer) {
            return false;
        }
        if content.propose {
            self.vertex_proposers
                .entry(round)
                .or_default()
                .insert(signer);
        }
        votes.insert(signer, content);
        if round > 1 {
            self.commit_dirty.insert(round - 1);
        }
        true
    }

    fn on_vote(&mut self, vote: Vote) {
        let content = vote.content();
        let multi = self.is_multi();
        if vote.sig.signer != vote.source
            || !self.keys.verify(&vote.sig, &content.signing_bytes())
            || content.check_structure(&self.schedule, multi).is_err()
        {
            trace!(me = %self.me, source = %vote.source, "dropping invalid vote");
            return;
        }
        self.record_vote(vote.source, content);
        if multi && self.forwarded_votes.insert((vote.round, vote.source)) {
            self.send(Dest::All, Message::Vote(vote));
        }
    }

    /// PVC, NPVC and CVC are only used in single-leader mode.
    fn on_vote_certificate(&mut self, cert: VoteCertificate) {
        if self.is_multi() || cert.check_structure(&self.schedule, false).is_err() {
            return;
        }
        for var in &cert.variants {
            if !self
                .keys
                .verify_aggregate_digest(&var.agg, &var.content.digest())
            {
                return;
            }
        }
        for var in cert.variants {
            for s in &var.agg.signers {
                self.record_vote(*s, var.content.clone());
            }
        }
    }

    fn on_timeout_message(&mut self, t: TimeoutMessage) {
        if t.sig.signer != t.source
            || t.round == 0
            || !self.keys.verify(&t.sig, &timeout_signing_bytes(t.round))
        {
            return;
        }
        let quorum = self.quorum();
        let signers = self.timeouts.entry(t.round).or_default();
        signers.insert(t.source);
        if signers.len() >= quorum && !self.tcs.contains_key(&t.round) {
            let agg = AggregateSignature {
                signers: signers.clone(),
                content_digest: Digest::of(&timeout_signing_bytes(t.round)),
            };
            self.store_tc(TimeoutCertificate {
                round: t.round,
                agg,
            });
        }
    }

    fn on_tc(&mut self, tc: TimeoutCertificate) {
        if tc.round > 0 && self.valid_tc(&tc) {
            self.store_tc(tc);
        }
    }

    fn store_tc(&mut self, tc: TimeoutCertificate) {
        let r = tc.round;
        if let btree_map::Entry::Vacant(e) = self.tcs.entry(r) {
            e.insert(tc.clone());
            self.emit(NodeEvent::TcStored { round: r });
        }
        if r >= self.round && self.tc_forwarded.insert(r) {
            self.send(Dest::All, Message::Tc(tc));
        }
    }

    // -------------------------------------------------------------- progress

    fn progress(&mut self) {
        loop {
            self.process_commits();
            let moved = self.try_jump() || self.try_advance();
            let created = self.try_create();
            if !moved && !created {
                break;
            }
        }
        self.process_commits();
    }

    /// Whether `L_{r+1}` (if that is this party) can justify its vertex:
    /// it needs the round-`r` leader vertex or the certificate chain down to
    /// the last delivered leader vertex.
    fn next_leader_ready(&self, r: Round) -> bool {
        self.schedule.leader_of(r + 1) != self.me
            || self.leader_vertex_delivered(r)
            || self.tc_chain(r + 1).is_some()
    }

    fn try_advance(&mut self) -> bool {
        let r = self.round;
        if self.pending.is_some()
            || !(self.leader_vertex_delivered(r) || self.tcs.contains_key(&r))
            || self.round_support(r) < self.quorum()
            || !self.next_leader_ready(r)
        {
            return false;
        }
        if !self.is_multi() && self.dag.round_len(r) < self.quorum() {
            self.multicast_proposal_certificates(r);
        }
        self.enter_round(r + 1, true);
        true
    }

    /// Catch-up rule: `f + 1` round-`r` vertices and votes plus the round-`r`
    /// leader vertex or `TC_r`, for any `r` above the current round.
    ///
    /// Before leaving, the party votes in every round from its current one up
    /// to `r` for which it has sent nothing yet. Parties still in those rounds
    /// can count these votes towards their `n - f` quorum; only the last one
    /// carries a propose flag, since only round `r + 1` gets a vertex.
    fn try_jump(&mut self) -> bool {
        let top = [
            self.dag.max_round(),
            self.round_votes.keys().next_back().copied().unwrap_or(0),
            self.tcs.keys().next_back().copied().unwrap_or(0),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        for r in (self.round + 1..=top).rev() {
            if (self.leader_vertex_delivered(r) || self.tcs.contains_key(&r))
                && self.round_support(r) > self.cfg.f
                && self.next_leader_ready(r)
            {
                for k in self.round.max(1)..=r {
                    if !self.sent_in_round(k) {
                        let propose = k == r && self.policy.intends(&self.schedule, self.me, r + 1);
                        self.cast_vote_with(k, propose);
                    }
                }
                self.enter_round(r + 1, false);
                return true;
            }
        }
        false
    }

    fn sent_in_round(&self, r: Round) -> bool {
        self.dag.get_vertex(self.me, r).is_some()
            || self
                .round_votes
                .get(&r)
                .is_some_and(|v| v.contains_key(&self.me))
    }

    fn multicast_proposal_certificates(&mut self, r: Round) {
        let Some(votes) = self.round_votes.get(&r) else {
            return;
        };
        let mut certs = Vec::new();
        for role in [CertRole::Propose, CertRole::NoPropose] {
            let want = role == CertRole::Propose;
            let variants = group_variants(votes.iter().filter(|(_, c)| c.propose == want));
            if !variants.is_empty() {
                certs.push(VoteCertificate {
                    round: r,
                    issuer: self.me,
                    role,
                    variants,
                });
            }
        }
        for cert in certs {
            self.send(Dest::All, Message::VoteCert(cert));
        }
    }

    fn enter_round(&mut self, round: Round, sequential: bool) {
        let via_leader = round > 1 && self.leader_vertex_delivered(round - 1);
        self.round = round;
        let tau = self.cfg.timeout_tau;
        let wait = if round == 1 || via_leader {
            tau
        } else {
            tau * 5 / 2
        };
        self.out.push(Output::SetTimer {
            round,
            at: self.now + wait,
        });
        self.emit(NodeEvent::RoundEntered {
            round,
            jump: !sequential,
            via_leader,
        });
        if self.is_multi() && round > 1 {
            self.send_no_votes(round - 1);
        }
        if self.schedule.leader_of(round) == self.me
            || self.policy.intends(&self.schedule, self.me, round)
        {
            self.pending = Some(Pending { round, sequential });
        } else {
            self.pending = None;
            self.cast_vote(round);
        }
    }

    /// Number of round `r - 1` vertices to wait for before a sequential-entry
    /// vertex of round `r`: announced proposers minus `f`. An announcer that
    /// has since sent a round `r - 1` vote will not create a vertex there and
    /// is not counted, nor is the round `r - 1` leader once this party timed
    /// out on it, since that vertex cannot become a strong edge.
    pub fn required_strong_edges(&self, r: Round) -> usize {
        if r < 3 {
            return 0;
        }
        let Some(announced) = self.vertex_proposers.get(&(r - 2)) else {
            return 0;
        };
        let voters = self.round_votes.get(&(r - 1));
        let excluded = self.excluded_leader(r);
        let pending = announced
            .iter()
            .filter(|p| Some(**p) != excluded && voters.is_none_or(|v| !v.contains_key(p)))
            .count();
        pending.saturating_sub(self.cfg.f)
    }

    /// The round `r - 1` leader when this party sent a timeout for it.
    fn excluded_leader(&self, r: Round) -> Option<PartyId> {
        (r > 1 && self.timeout_sent.contains(&(r - 1))).then(|| self.schedule.leader_of(r - 1))
    }

    fn try_create(&mut self) -> bool {
        let Some(p) = self.pending else { return false };
        let r = p.round;
        let required = if p.sequential {
            self.required_strong_edges(r)
        } else {
            0
        };
        let excluded = self.excluded_leader(r);
        let strong: BTreeSet<VertexId> = if r > 1 {
            self.dag
                .round_vertices(r - 1)
                .map(Vertex::id)
                .filter(|e| Some(e.source) != excluded)
                .collect()
        } else {
            BTreeSet::new()
        };
        if strong.len() < required {
            return false;
        }
        let mut draft = VertexDraft::new(r, self.me);
        if self.schedule.leader_of(r) == self.me && r > 1 {
            match self.leader_plan(r, &strong) {
                Plan::Ready {
                    leader_edges,
                    tcs,
                    nvc,
                } => {
                    draft.leader_edges = leader_edges;
                    draft.tcs = tcs;
                    draft.nvc = nvc;
                }
                Plan::Wait => return false,
                Plan::Abstain => {
                    self.pending = None;
                    self.cast_vote(r);
                    return true;
                }
            }
        }
        draft.weak_edges = self.dag.set_weak_edges(&strong, &draft.leader_edges, r);
        draft.strong_edges = strong;
        draft.propose = self.policy.intends(&self.schedule, self.me, r + 1);
        draft.block = self.next_block();
        let v = draft
            .seal(&self.schedule)
            .expect("own vertices satisfy the structural rules");
        self.pending = None;
        self.emit(NodeEvent::VertexCreated {
            id: v.id(),
            strong_edges: v.strong_edges().len(),
            required,
            sequential: p.sequential,
            leader_excluded: excluded.is_some(),
        });
        if v.propose() {
            self.vertex_proposers.entry(r).or_default().insert(self.me);
        }
        let payload = Bytes::from(encode_vertex(&v));
        self.add_to_dag(v);
        let out = self.rbc.broadcast(r, payload);
        for (dest, m) in out.sends {
            self.send(dest, Message::Rbc(m));
        }
        true
    }

    fn next_block(&mut self) -> Block {
        if let Some(b) = self.blocks.pop_front() {
            return b;
        }
        let txs = (0..self.txs_per_vertex)
            .map(|_| {
                self.tx_counter += 1;
                Transaction {
                    id: (u64::from(self.me.0) << 40) | self.tx_counter,
                    created_at: self.now,
                }
            })
            .collect();
        Block {
            txs,
            filler: self.filler_bytes,
        }
    }

    /// Certificate chain for a main leader vertex of `round` that does not
    /// reference the previous leader vertex: `TC_{round-1}` and one TC per
    /// earlier round down to the last delivered leader vertex. Returns that
    /// round (if any) and the chain in increasing round order.
    fn tc_chain(&self, round: Round) -> Option<(Option<Round>, Vec<TimeoutCertificate>)> {
        let mut tcs = Vec::new();
        let mut r = round.checked_sub(1).filter(|r| *r >= 1)?;
        loop {
            tcs.push(self.tcs.get(&r)?.clone());
            r -= 1;
            if r == 0 || self.leader_vertex_delivered(r) {
                tcs.reverse();
                return Some(((r > 0).then_some(r), tcs));
            }
        }
    }

    fn leader_plan(&self, round: Round, strong: &BTreeSet<VertexId>) -> Plan {
        let prev = round - 1;
        let prev_leader = self.schedule.leader_of(prev);
        let (anchor, tcs) = if strong.iter().any(|e| e.source == prev_leader) {
            (Anchor::Strong(prev), Vec::new())
        } else {
            match self.tc_chain(round) {
                Some((Some(t), tcs)) => (Anchor::Edge(t), tcs),
                Some((None, tcs)) => (Anchor::Genesis, tcs),
                None if self.leader_vertex_delivered(prev) => return Plan::Abstain,
                None => return Plan::Wait,
            }
        };
        if self.is_multi() {
            return self.multi_leader_plan(anchor, tcs);
        }
        let leader_edges = match anchor {
            Anchor::Edge(t) => self
                .dag
                .get_leader_vertex(t)
                .map(Vertex::id)
                .into_iter()
                .collect(),
            Anchor::Strong(_) | Anchor::Genesis => BTreeSet::new(),
        };
        Plan::Ready {
            leader_edges,
            tcs,
            nvc: None,
        }
    }

    fn cast_vote(&mut self, round: Round) {
        let propose = self.policy.intends(&self.schedule, self.me, round + 1);
        self.cast_vote_with(round, propose);
    }

    fn cast_vote_with(&mut self, round: Round, propose: bool) {
        let mut edges = BTreeSet::new();
        if round > 1 && !self.timeout_sent.contains(&(round - 1)) {
            if let Some(lv) = self.dag.get_leader_vertex(round - 1) {
                edges.insert(lv.id());
                if self.is_multi() {
                    for l in self.schedule.leaders_of(round - 1).into_iter().skip(1) {
                        if let Some(v) = self.dag.get_vertex(l, round - 1) {
                            edges.insert(v.id());
                        }
                    }
                }
            }
        }
        let content = VoteContent {
            round,
            propose,
            strong_edges: edges,
        };
        let sig = self
            .keys
            .sign(self.me, &content.signing_bytes())
            .expect("own index is valid");
        let vote = Vote {
            round,
            source: self.me,
            propose: content.propose,
            strong_edges: content.strong_edges.clone(),
            sig,
        };
        self.emit(NodeEvent::VoteCreated {
            round,
            edges: content.strong_edges.len(),
        });
        self.record_vote(self.me, content);
        self.forwarded_votes.insert((round, self.me));
        self.send(Dest::All, Message::Vote(vote));
    }

    // ---------------------------------------------------------------- commit

    fn process_commits(&mut self) {
        while let Some(r) = self.commit_dirty.pop_first() {
            if r > 0 {
                self.try_commit(r);
            }
        }
    }

    /// Round `r + 1` parties endorsing `leader`: sources of first messages
    /// whose strong edges include it, and vote signers that reference it.
    pub fn commit_support(
        &self,
        r: Round,
        leader: &VertexId,
    ) -> (BTreeSet<PartyId>, BTreeSet<PartyId>) {
        let from_vertices = self
            .first_messages
            .get(&(r + 1))
            .into_iter()
            .flatten()
            .filter(|(_, edges)| edges.contains(leader))
            .map(|(p, _)| *p)
            .collect();
        let from_votes = self
            .round_votes
            .get(&(r + 1))
            .into_iter()
            .flatten()
            .filter(|(_, c)| c.supports(leader))
            .map(|(p, _)| *p)
            .collect();
        (from_vertices, from_votes)
    }

    /// Direct commit of the longest supported prefix of round `r`'s leader
    /// list. In multi-leader mode a round already committed up to some prefix
    /// may be extended, which keeps all parties on the same leader order.
    fn try_commit(&mut self, r: Round) {
        if r < self.committed_round {
            return;
        }
        let leaders = self.schedule.leaders_of(r);
        let start = self.committed_prefix(r);
        if r == self.committed_round && start >= leaders.len() {
            return;
        }
        let mut cls = Vec::new();
        let mut cvc = None;
        for &l in &leaders[start..] {
            let Some(id) = self.dag.get_vertex(l, r).map(Vertex::id) else {
                break;
            };
            let (w, s) = self.commit_support(r, &id);
            if w.union(&s).count() < self.quorum() {
                break;
            }
            if cls.is_empty() && w.len() < self.quorum() {
                cvc = Some(s);
            }
            cls.push(id);
        }
        if cls.is_empty() {
            return;
        }
        if let (false, Some(signers)) = (self.is_multi(), cvc) {
            if self.cvc_sent.insert(r) {
                let votes = &self.round_votes[&(r + 1)];
                let variants = group_variants(votes.iter().filter(|(p, _)| signers.contains(p)));
                let cert = VoteCertificate {
                    round: r + 1,
                    issuer: self.me,
                    role: CertRole::Commit,
                    variants,
                };
                self.send(Dest::All, Message::VoteCert(cert));
            }
        }
        self.commit_leaders(r, cls);
    }

    fn commit_leaders(&mut self, r: Round, cls: Vec<VertexId>) {
        for id in &cls {
            self.out.push(Output::Commit {
                leader: *id,
                direct: true,
            });
        }
        *self.committed_prefix.entry(r).or_default() += cls.len();
        let mut anchor = cls[0];
        self.leader_stack.push(cls);
        if r > self.committed_round {
            let floor = self.committed_round.max(1);
            for rr in (floor..r).rev() {
                let start = if rr == self.committed_round {
                    self.committed_prefix(rr)
                } else {
                    0
                };
                let mut cmv = Vec::new();
                for l in self.schedule.leaders_of(rr).into_iter().skip(start) {
                    match self.dag.get_vertex(l, rr).map(Vertex::id) {
                        Some(id) if self.dag.leader_path(&anchor, &id) => cmv.push(id),
                        _ => break,
                    }
                }
                if cmv.is_empty() {
                    continue;
                }
                if start == 0 {
                    anchor = cmv[0];
                }
                for id in &cmv {
                    self.out.push(Output::Commit {
                        leader: *id,
                        direct: false,
                    });
                }
                *self.committed_prefix.entry(rr).or_default() += cmv.len();
                self.leader_stack.push(cmv);
            }
            self.committed_round = r;
        }
        self.order_vertices();
    }

    /// Pops committed leader lists lowest round first and outputs each
    /// leader's not yet delivered causal history in (round, source, digest)
    /// order.
    fn order_vertices(&mut self) {
        while let Some(list) = self.leader_stack.pop() {
            for leader in list {
                for id in self.dag.deliver_history(&leader) {
                    let block = self
                        .dag
                        .get(&id)
                        .expect("history is stored")
                        .block()
                        .clone();
                    self.out.push(Output::Deliver { vertex: id, block });
                }
            }
        }
    }
}

/// Groups (signer, content) pairs into one aggregate per distinct content.
fn group_variants<'a>(
    votes: impl Iterator<Item = (&'a PartyId, &'a VoteContent)>,
) -> Vec<CertVariant> {
    let mut groups: BTreeMap<&VoteContent, BTreeSet<PartyId>> = BTreeMap::new();
    for (p, c) in votes {
        groups.entry(c).or_default().insert(*p);
    }
    groups
        .into_iter()
        .map(|(c, signers)| CertVariant {
            content: c.clone(),
            agg: AggregateSignature {
                signers,
                content_digest: c.digest(),
            },
        })
        .collect()
}
