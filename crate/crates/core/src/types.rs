//! Protocol identifiers, messages and configuration.
//!
//! Everything here is a plain value. Vertices are immutable once sealed: the
//! [`VertexId`] is derived from the canonical encoding, so any change to a
//! vertex yields a different identity.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec;
use crate::crypto::{AggregateSignature, Signature};
use crate::schedule::LeaderSchedule;

pub type Round = u64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
#[derive(Default)]
pub struct PartyId(pub u32);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for PartyId {
    fn from(i: usize) -> Self {
        PartyId(i as u32)
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_le_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    /// First four bytes as lowercase hex, used in traces and DOT labels.
    pub fn short(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

/// Reference to a vertex: its position in the layered DAG plus the digest of
/// its canonical encoding. The derived ordering is (round, source, digest),
/// which is also the linearization tie-break.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId {
    pub round: Round,
    pub source: PartyId,
    pub digest: Digest,
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v({}, {}, {:?})", self.round, self.source, self.digest)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    /// Virtual time at which the client created the transaction.
    pub created_at: u64,
}

/// A block of synthetic transactions. `filler` zero bytes are appended on the
/// wire to model payload size.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Block {
    pub txs: Vec<Transaction>,
    pub filler: u32,
}

impl Block {
    pub fn empty() -> Self {
        Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbcKind {
    Bracha,
    #[serde(alias = "two_step")]
    TwoStepCertified,
    FastPath,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    #[default]
    Single,
    Multi,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("n = {n} must exceed 3f = {}", 3 * f)]
    TooManyFaults { n: usize, f: usize },
    #[error("leaders_per_round = {k} must be in 1..={n}")]
    LeadersPerRound { k: usize, n: usize },
    #[error("timeout_tau must be positive")]
    ZeroTimeout,
    #[error("propose_rate {0} outside [0, 1]")]
    ProposeRate(f64),
    #[error("single-leader mode requires leaders_per_round = 1")]
    SingleModeLeaders,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n: usize,
    pub f: usize,
    /// Base round timer (delay units). Used as-is when a round is entered
    /// through the previous leader vertex; stretched by 5/2 otherwise.
    pub timeout_tau: u64,
    pub rbc_kind: RbcKind,
    #[serde(default)]
    pub leader_schedule_seed: u64,
    #[serde(default = "one")]
    pub leaders_per_round: usize,
    #[serde(default = "full_rate")]
    pub propose_rate: f64,
    #[serde(default)]
    pub mode: ProtocolMode,
}

fn one() -> usize {
    1
}

fn full_rate() -> f64 {
    1.0
}

impl ProtocolConfig {
    /// Single-leader configuration with the largest `f` allowed for `n`.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            f: (n - 1) / 3,
            timeout_tau: 4,
            rbc_kind: RbcKind::Bracha,
            leader_schedule_seed: 0,
            leaders_per_round: 1,
            propose_rate: 1.0,
            mode: ProtocolMode::Single,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n <= 3 * self.f {
            return Err(ConfigError::TooManyFaults {
                n: self.n,
                f: self.f,
            });
        }
        if self.leaders_per_round == 0 || self.leaders_per_round > self.n {
            return Err(ConfigError::LeadersPerRound {
                k: self.leaders_per_round,
                n: self.n,
            });
        }
        if self.timeout_tau == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        if !(0.0..=1.0).contains(&self.propose_rate) {
            return Err(ConfigError::ProposeRate(self.propose_rate));
        }
        if self.mode == ProtocolMode::Single && self.leaders_per_round != 1 {
            return Err(ConfigError::SingleModeLeaders);
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    pub fn weak_quorum(&self) -> usize {
        self.f + 1
    }

    pub fn is_multi(&self) -> bool {
        self.mode == ProtocolMode::Multi
    }

    pub fn schedule(&self) -> LeaderSchedule {
        LeaderSchedule::new(self.n, self.leader_schedule_seed, self.leaders_per_round)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("round must be at least 1")]
    ZeroRound,
    #[error("{0} is not a committee member")]
    UnknownParty(PartyId),
    #[error("strong edge {0:?} must target round {1}")]
    StrongEdgeRound(VertexId, Round),
    #[error("two strong edges to vertices of {0}")]
    DuplicateStrongSource(PartyId),
    #[error("weak edge {0:?} must target a round in 1..={1}")]
    WeakEdgeRound(VertexId, Round),
    #[error("leader edge {0:?} must target a round in 1..={1}")]
    LeaderEdgeRound(VertexId, Round),
    #[error("leader edges must all target one round")]
    MixedLeaderEdgeRounds,
    #[error("{got} leader edges, at most {max} allowed")]
    TooManyLeaderEdges { got: usize, max: usize },
    #[error("timeout certificates must have strictly increasing rounds below {0}")]
    TcOrder(Round),
    #[error("timeout certificates must cover exactly rounds {from}..={to}")]
    TcChain { from: Round, to: Round },
    #[error("only the main leader vertex may carry leader edges or certificates")]
    NotMainLeader,
    #[error("leader edge alongside a strong edge to the previous leader vertex")]
    RedundantLeaderEdge,
    #[error("no-vote certificate for round {0} is not below the vertex round")]
    NvcRound(Round),
    #[error("vote edge {0:?} must target a leader vertex of round {1}")]
    VoteEdge(VertexId, Round),
    #[error("{got} vote edges, at most {max} allowed")]
    VoteEdgeCount { got: usize, max: usize },
    #[error("signature does not match the signed content")]
    BadSignature,
    #[error("certificate carries no signatures")]
    EmptyCertificate,
    #[error("certificate variants have overlapping signers")]
    OverlappingSigners,
    #[error("certificate variant is inconsistent with its role")]
    RoleMismatch,
    #[error("{got} signers, quorum is {need}")]
    Quorum { got: usize, need: usize },
}

/// Mutable vertex under construction; [`VertexDraft::seal`] validates it and
/// fixes its identity.
#[derive(Clone, Debug, Default)]
pub struct VertexDraft {
    pub round: Round,
    pub source: PartyId,
    pub block: Block,
    pub propose: bool,
    pub strong_edges: BTreeSet<VertexId>,
    pub weak_edges: BTreeSet<VertexId>,
    pub leader_edges: BTreeSet<VertexId>,
    pub tcs: Vec<TimeoutCertificate>,
    pub nvc: Option<NoVoteCertificate>,
}

impl VertexDraft {
    pub fn new(round: Round, source: PartyId) -> Self {
        Self {
            round,
            source,
            ..Default::default()
        }
    }

    pub fn seal(self, schedule: &LeaderSchedule) -> Result<Vertex, StructureError> {
        let v = self.seal_unvalidated();
        v.check_structure(schedule)?;
        Ok(v)
    }

    /// Fixes the identity without schedule validation. Meant for fixtures and
    /// adversarial inputs; receivers validate structure on receipt anyway.
    pub fn seal_unvalidated(self) -> Vertex {
        let mut v = Vertex {
            round: self.round,
            source: self.source,
            block: self.block,
            propose: self.propose,
            strong_edges: self.strong_edges,
            weak_edges: self.weak_edges,
            leader_edges: self.leader_edges,
            tcs: self.tcs,
            nvc: self.nvc,
            id: VertexId {
                round: self.round,
                source: self.source,
                digest: Digest::default(),
            },
        };
        v.id.digest = Digest::of(&codec::encode_vertex(&v));
        v
    }
}

/// A DAG vertex. Constructed only through [`VertexDraft::seal`] or by
/// decoding, so `id` always matches the canonical encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub(crate) round: Round,
    pub(crate) source: PartyId,
    pub(crate) block: Block,
    pub(crate) propose: bool,
    pub(crate) strong_edges: BTreeSet<VertexId>,
    pub(crate) weak_edges: BTreeSet<VertexId>,
    pub(crate) leader_edges: BTreeSet<VertexId>,
    pub(crate) tcs: Vec<TimeoutCertificate>,
    pub(crate) nvc: Option<NoVoteCertificate>,
    pub(crate) id: VertexId,
}

impl Vertex {
    pub fn id(&self) -> VertexId {
        self.id
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn source(&self) -> PartyId {
        self.source
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn propose(&self) -> bool {
        self.propose
    }

    pub fn strong_edges(&self) -> &BTreeSet<VertexId> {
        &self.strong_edges
    }

    pub fn weak_edges(&self) -> &BTreeSet<VertexId> {
        &self.weak_edges
    }

    pub fn leader_edges(&self) -> &BTreeSet<VertexId> {
        &self.leader_edges
    }

    /// The single leader edge of a single-leader vertex (the main-leader edge
    /// in multi-leader mode).
    pub fn leader_edge(&self) -> Option<VertexId> {
        self.leader_edges.iter().next().copied()
    }

    pub fn tcs(&self) -> &[TimeoutCertificate] {
        &self.tcs
    }

    pub fn nvc(&self) -> Option<&NoVoteCertificate> {
        self.nvc.as_ref()
    }

    /// All outgoing edges: strong, weak and leader.
    pub fn edges(&self) -> impl Iterator<Item = &VertexId> {
        self.strong_edges
            .iter()
            .chain(&self.weak_edges)
            .chain(&self.leader_edges)
    }

    pub fn has_strong_edge_from_source(&self, source: PartyId) -> bool {
        self.strong_edges.iter().any(|e| e.source == source)
    }

    pub fn to_draft(&self) -> VertexDraft {
        VertexDraft {
            round: self.round,
            source: self.source,
            block: self.block.clone(),
            propose: self.propose,
            strong_edges: self.strong_edges.clone(),
            weak_edges: self.weak_edges.clone(),
            leader_edges: self.leader_edges.clone(),
            tcs: self.tcs.clone(),
            nvc: self.nvc.clone(),
        }
    }

    /// Invariants that can be checked without any DAG state. Quorum and
    /// signature validity of embedded certificates is left to the receiver.
    pub fn check_structure(&self, schedule: &LeaderSchedule) -> Result<(), StructureError> {
        let r = self.round;
        if r == 0 {
            return Err(StructureError::ZeroRound);
        }
        let n = schedule.n();
        let member = |p: PartyId| {
            if p.index() < n {
                Ok(())
            } else {
                Err(StructureError::UnknownParty(p))
            }
        };
        member(self.source)?;

        let mut sources = BTreeSet::new();
        for e in &self.strong_edges {
            member(e.source)?;
            if e.round + 1 != r {
                return Err(StructureError::StrongEdgeRound(*e, r - 1));
            }
            if !sources.insert(e.source) {
                return Err(StructureError::DuplicateStrongSource(e.source));
            }
        }
        for e in &self.weak_edges {
            member(e.source)?;
            if e.round == 0 || e.round + 2 > r {
                return Err(StructureError::WeakEdgeRound(*e, r.saturating_sub(2)));
            }
        }
        let mut leader_round = None;
        for e in &self.leader_edges {
            member(e.source)?;
            if e.round == 0 || e.round + 2 > r {
                return Err(StructureError::LeaderEdgeRound(*e, r.saturating_sub(2)));
            }
            if *leader_round.get_or_insert(e.round) != e.round {
                return Err(StructureError::MixedLeaderEdgeRounds);
            }
        }
        if self.leader_edges.len() > schedule.leaders_per_round() {
            return Err(StructureError::TooManyLeaderEdges {
                got: self.leader_edges.len(),
                max: schedule.leaders_per_round(),
            });
        }
        for w in self.tcs.windows(2) {
            if w[0].round >= w[1].round {
                return Err(StructureError::TcOrder(r));
            }
        }
        if self.tcs.iter().any(|tc| tc.round == 0 || tc.round >= r) {
            return Err(StructureError::TcOrder(r));
        }
        if let Some(nvc) = &self.nvc {
            if nvc.round == 0 || nvc.round >= r {
                return Err(StructureError::NvcRound(nvc.round));
            }
        }

        let main = schedule.leader_of(r);
        if self.source != main {
            if !self.leader_edges.is_empty() || !self.tcs.is_empty() || self.nvc.is_some() {
                return Err(StructureError::NotMainLeader);
            }
            return Ok(());
        }
        if r == 1 {
            return Ok(());
        }
        let has_prev = self.has_strong_edge_from_source(schedule.leader_of(r - 1));
        let chain_from = match (has_prev, leader_round) {
            (true, Some(_)) => return Err(StructureError::RedundantLeaderEdge),
            (true, None) => None,
            (false, Some(target)) => Some(target + 1),
            // Every earlier leader was skipped: the chain reaches back to round 1.
            (false, None) => Some(1),
        };
        match chain_from {
            None if !self.tcs.is_empty() => Err(StructureError::TcChain { from: r, to: r - 1 }),
            Some(from) if !tc_rounds_are(&self.tcs, from, r - 1) => {
                Err(StructureError::TcChain { from, to: r - 1 })
            }
            _ => Ok(()),
        }
    }
}

fn tc_rounds_are(tcs: &[TimeoutCertificate], from: Round, to: Round) -> bool {
    tcs.len() as u64 == to + 1 - from && tcs.iter().zip(from..=to).all(|(tc, r)| tc.round == r)
}

/// The signed part of a vote. Signatures cover this content only (the source
/// is carried by the signature), so votes with identical content aggregate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoteContent {
    pub round: Round,
    pub propose: bool,
    pub strong_edges: BTreeSet<VertexId>,
}

impl VoteContent {
    pub fn signing_bytes(&self) -> Vec<u8> {
        codec::encode_vote_content(self)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.signing_bytes())
    }

    pub fn supports(&self, leader_vertex: &VertexId) -> bool {
        self.strong_edges.contains(leader_vertex)
    }

    /// Schedule-level checks shared by votes and certificate variants.
    pub fn check_structure(
        &self,
        schedule: &LeaderSchedule,
        multi: bool,
    ) -> Result<(), StructureError> {
        if self.round == 0 {
            return Err(StructureError::ZeroRound);
        }
        let max = if multi {
            schedule.leaders_per_round()
        } else {
            1
        };
        if self.strong_edges.len() > max {
            return Err(StructureError::VoteEdgeCount {
                got: self.strong_edges.len(),
                max,
            });
        }
        for e in &self.strong_edges {
            let prev = self.round - 1;
            let is_leader = if multi {
                schedule.is_leader(prev, e.source)
            } else {
                schedule.leader_of(prev) == e.source
            };
            if e.round != prev || prev == 0 || !is_leader {
                return Err(StructureError::VoteEdge(*e, prev));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Vote {
    pub round: Round,
    pub source: PartyId,
    pub propose: bool,
    /// At most one edge in single-leader mode; one per delivered leader of the
    /// previous round in multi-leader mode.
    pub strong_edges: BTreeSet<VertexId>,
    pub sig: Signature,
}

impl Vote {
    pub fn content(&self) -> VoteContent {
        VoteContent {
            round: self.round,
            propose: self.propose,
            strong_edges: self.strong_edges.clone(),
        }
    }

    pub fn strong_edge(&self) -> Option<VertexId> {
        self.strong_edges.iter().next().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TimeoutMessage {
    pub round: Round,
    pub source: PartyId,
    pub sig: Signature,
}

pub fn timeout_signing_bytes(round: Round) -> Vec<u8> {
    let mut b = b"angelfish/timeout".to_vec();
    b.extend_from_slice(&round.to_le_bytes());
    b
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TimeoutCertificate {
    pub round: Round,
    pub agg: AggregateSignature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertRole {
    Propose,
    NoPropose,
    Commit,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CertVariant {
    pub content: VoteContent,
    pub agg: AggregateSignature,
}

/// PVC, NPVC or CVC: one aggregate per distinct vote content.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoteCertificate {
    /// Round of the aggregated votes.
    pub round: Round,
    pub issuer: PartyId,
    pub role: CertRole,
    pub variants: Vec<CertVariant>,
}

impl VoteCertificate {
    pub fn signers(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.variants
            .iter()
            .flat_map(|v| v.agg.signers.iter().copied())
    }

    /// Signer-set disjointness, per-variant digests and role consistency.
    pub fn check_structure(
        &self,
        schedule: &LeaderSchedule,
        multi: bool,
    ) -> Result<(), StructureError> {
        if self.variants.is_empty() {
            return Err(StructureError::EmptyCertificate);
        }
        let mut seen = BTreeSet::new();
        let mut commit_target = None;
        for var in &self.variants {
            if var.content.round != self.round {
                return Err(StructureError::RoleMismatch);
            }
            var.content.check_structure(schedule, multi)?;
            if var.agg.content_digest != var.content.digest() {
                return Err(StructureError::BadSignature);
            }
            if var.agg.signers.is_empty() {
                return Err(StructureError::EmptyCertificate);
            }
            for s in &var.agg.signers {
                if s.index() >= schedule.n() {
                    return Err(StructureError::UnknownParty(*s));
                }
                if !seen.insert(*s) {
                    return Err(StructureError::OverlappingSigners);
                }
            }
            let ok = match self.role {
                CertRole::Propose => var.content.propose,
                CertRole::NoPropose => !var.content.propose,
                CertRole::Commit => {
                    let target = var
                        .content
                        .strong_edges
                        .iter()
                        .find(|e| e.source == schedule.leader_of(e.round));
                    match (target, commit_target) {
                        (None, _) => false,
                        (Some(t), None) => {
                            commit_target = Some(*t);
                            true
                        }
                        (Some(t), Some(prev)) => *t == prev,
                    }
                }
            };
            if !ok {
                return Err(StructureError::RoleMismatch);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NoVoteMessage {
    pub round: Round,
    pub target_leader: PartyId,
    pub source: PartyId,
    pub sig: Signature,
}

pub fn no_vote_signing_bytes(round: Round, target: PartyId) -> Vec<u8> {
    let mut b = b"angelfish/no-vote".to_vec();
    b.extend_from_slice(&round.to_le_bytes());
    b.extend_from_slice(&target.0.to_le_bytes());
    b
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NoVoteCertificate {
    pub round: Round,
    pub target_leader: PartyId,
    pub agg: AggregateSignature,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keyring;

    fn sched(n: usize) -> LeaderSchedule {
        LeaderSchedule::new(n, 0, 1)
    }

    fn tc(round: Round, n: usize) -> TimeoutCertificate {
        let keys = Keyring::new(n);
        let sigs: Vec<_> = (0..n)
            .map(|i| {
                keys.sign(PartyId::from(i), &timeout_signing_bytes(round))
                    .unwrap()
            })
            .collect();
        TimeoutCertificate {
            round,
            agg: crate::crypto::aggregate(&sigs).unwrap(),
        }
    }

    fn vid(round: Round, source: u32) -> VertexId {
        VertexId {
            round,
            source: PartyId(source),
            digest: Digest::of(&[round as u8, source as u8]),
        }
    }

    #[test]
    fn config_invariants() {
        assert!(ProtocolConfig::new(4).validate().is_ok());
        let mut c = ProtocolConfig::new(4);
        c.f = 2;
        assert_eq!(c.validate(), Err(ConfigError::TooManyFaults { n: 4, f: 2 }));
        let mut c = ProtocolConfig::new(4);
        c.mode = ProtocolMode::Multi;
        c.leaders_per_round = 5;
        assert!(matches!(
            c.validate(),
            Err(ConfigError::LeadersPerRound { .. })
        ));
        let mut c = ProtocolConfig::new(4);
        c.timeout_tau = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroTimeout));
    }

    #[test]
    fn equal_drafts_seal_to_equal_ids() {
        let s = sched(4);
        let mut d = VertexDraft::new(2, PartyId(3));
        d.strong_edges.insert(vid(1, 0));
        let a = d.clone().seal(&s).unwrap();
        let b = d.clone().seal(&s).unwrap();
        assert_eq!(a.id(), b.id());
        d.propose = true;
        assert_ne!(d.seal(&s).unwrap().id(), a.id());
    }

    #[test]
    fn strong_edges_must_target_previous_round() {
        let mut d = VertexDraft::new(3, PartyId(0));
        d.strong_edges.insert(vid(1, 1));
        assert!(matches!(
            d.seal(&sched(4)),
            Err(StructureError::StrongEdgeRound(..))
        ));
    }

    #[test]
    fn weak_edges_must_skip_a_round() {
        let mut d = VertexDraft::new(3, PartyId(0));
        d.weak_edges.insert(vid(2, 1));
        assert!(matches!(
            d.seal(&sched(4)),
            Err(StructureError::WeakEdgeRound(..))
        ));
    }

    #[test]
    fn leader_edge_requires_exact_tc_chain() {
        let s = sched(4);
        // L_5 = P1 under round robin; leader edge to L_2's vertex needs TC_3, TC_4.
        let mut d = VertexDraft::new(5, PartyId(1));
        d.leader_edges.insert(vid(2, 2));
        d.tcs = vec![tc(4, 4)];
        assert_eq!(
            d.clone().seal(&s).unwrap_err(),
            StructureError::TcChain { from: 3, to: 4 }
        );
        d.tcs = vec![tc(3, 4), tc(4, 4)];
        assert!(d.clone().seal(&s).is_ok());
        d.strong_edges.insert(vid(4, 0));
        assert_eq!(d.seal(&s).unwrap_err(), StructureError::RedundantLeaderEdge);
    }

    #[test]
    fn non_leaders_cannot_carry_leader_edges() {
        let mut d = VertexDraft::new(5, PartyId(2));
        d.leader_edges.insert(vid(3, 3));
        d.tcs = vec![tc(4, 4)];
        assert_eq!(
            d.seal(&sched(4)).unwrap_err(),
            StructureError::NotMainLeader
        );
    }

    #[test]
    fn leader_without_any_previous_leader_needs_full_chain() {
        let s = sched(4);
        let mut d = VertexDraft::new(3, PartyId(3));
        assert!(matches!(
            d.clone().seal(&s),
            Err(StructureError::TcChain { from: 1, to: 2 })
        ));
        d.tcs = vec![tc(1, 4), tc(2, 4)];
        assert!(d.seal(&s).is_ok());
    }

    #[test]
    fn vote_edges_must_name_previous_leader() {
        let s = sched(4);
        let ok = VoteContent {
            round: 3,
            propose: false,
            strong_edges: [vid(2, 2)].into(),
        };
        assert!(ok.check_structure(&s, false).is_ok());
        let bad = VoteContent {
            round: 3,
            propose: false,
            strong_edges: [vid(2, 1)].into(),
        };
        assert!(matches!(
            bad.check_structure(&s, false),
            Err(StructureError::VoteEdge(..))
        ));
        let first = VoteContent {
            round: 1,
            propose: false,
            strong_edges: [vid(0, 0)].into(),
        };
        assert!(first.check_structure(&s, false).is_err());
    }
}
