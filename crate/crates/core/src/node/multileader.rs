//! Multi-leader extensions: no-vote messages and certificates, and the
//! prefix rule for main leader vertices.
//!
//! A main leader vertex anchors at round `t`: the previous round when it has
//! a strong edge to the previous main leader vertex, otherwise the round its
//! leader edges point to. It must reference the leader vertices of the
//! longest prefix `ML_t[..x]` it knows, and carry a no-vote certificate for
//! `ML_t[x]` unless the whole list is referenced.

use std::collections::BTreeSet;

use super::{Anchor, Node, NodeEvent, Plan, RejectReason};
use crate::broadcast::Dest;
use crate::codec::Message;
use crate::crypto::AggregateSignature;
use crate::types::{
    no_vote_signing_bytes, Digest, NoVoteCertificate, NoVoteMessage, PartyId, Round,
    TimeoutCertificate, Vertex, VertexId,
};

impl Node {
    /// Receiver-side check of a main leader vertex in multi-leader mode.
    pub(super) fn check_multi_leader_vertex(&self, v: &Vertex) -> Result<(), RejectReason> {
        let r = v.round();
        if r == 1 {
            return Ok(());
        }
        let prev = r - 1;
        let (t, referenced): (Round, BTreeSet<PartyId>) =
            if v.has_strong_edge_from_source(self.schedule.leader_of(prev)) {
                (prev, v.strong_edges().iter().map(|e| e.source).collect())
            } else if let Some(t) = v.leader_edges().iter().next().map(|e| e.round) {
                (t, v.leader_edges().iter().map(|e| e.source).collect())
            } else {
                return match v.nvc() {
                    Some(_) => Err(RejectReason::UnexpectedNvc),
                    None => Ok(()),
                };
            };
        let list = self.schedule.leaders_of(t);
        let x = list.iter().take_while(|l| referenced.contains(l)).count();
        if x == 0 {
            return Err(RejectReason::NotPrefix(t));
        }
        if t < prev {
            // Leader edges must be exactly the prefix.
            let prefix: BTreeSet<PartyId> = list[..x].iter().copied().collect();
            if referenced != prefix {
                return Err(RejectReason::NotPrefix(t));
            }
            for e in v.leader_edges() {
                if !prefix.contains(&e.source) {
                    return Err(RejectReason::LeaderEdgeTarget(*e));
                }
            }
        }
        match (x < list.len(), v.nvc()) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(RejectReason::UnexpectedNvc),
            (true, None) => Err(RejectReason::MissingNvc {
                round: t,
                target: list[x],
            }),
            (true, Some(nvc)) => {
                if nvc.round == t && nvc.target_leader == list[x] && self.valid_nvc(nvc) {
                    Ok(())
                } else {
                    Err(RejectReason::BadNvc)
                }
            }
        }
    }

    pub(super) fn valid_nvc(&self, c: &NoVoteCertificate) -> bool {
        c.agg.len() >= self.quorum()
            && self.schedule.is_leader(c.round, c.target_leader)
            && self
                .keys
                .verify_aggregate(&c.agg, &no_vote_signing_bytes(c.round, c.target_leader))
    }

    /// Main-leader wait: the delivered prefix of the anchor round's leader
    /// list, plus a no-vote certificate for the first missing leader.
    pub(super) fn multi_leader_plan(&self, anchor: Anchor, tcs: Vec<TimeoutCertificate>) -> Plan {
        let t = match anchor {
            Anchor::Strong(t) | Anchor::Edge(t) => t,
            Anchor::Genesis => {
                return Plan::Ready {
                    leader_edges: BTreeSet::new(),
                    tcs,
                    nvc: None,
                }
            }
        };
        let list = self.schedule.leaders_of(t);
        let prefix: Vec<VertexId> = list
            .iter()
            .map_while(|l| self.dag.get_vertex(*l, t).map(Vertex::id))
            .collect();
        let nvc = if prefix.len() < list.len() {
            match self.nvcs.get(&(t, list[prefix.len()])) {
                Some(c) => Some(c.clone()),
                None => return Plan::Wait,
            }
        } else {
            None
        };
        let leader_edges = match anchor {
            Anchor::Edge(_) => prefix.into_iter().collect(),
            _ => BTreeSet::new(),
        };
        Plan::Ready {
            leader_edges,
            tcs,
            nvc,
        }
    }

    /// On entering round `r + 1`: a no-vote for every round-`r` leader whose
    /// vertex is still undelivered.
    pub(super) fn send_no_votes(&mut self, r: Round) {
        for target in self.schedule.leaders_of(r) {
            if self.dag.get_vertex(target, r).is_none() {
                let sig = self
                    .keys
                    .sign(self.me, &no_vote_signing_bytes(r, target))
                    .expect("own index is valid");
                self.send(
                    Dest::All,
                    Message::NoVote(NoVoteMessage {
                        round: r,
                        target_leader: target,
                        source: self.me,
                        sig,
                    }),
                );
            }
        }
    }

    pub(super) fn on_no_vote(&mut self, m: NoVoteMessage) {
        if !self.is_multi()
            || m.sig.signer != m.source
            || !self.schedule.is_leader(m.round, m.target_leader)
            || !self
                .keys
                .verify(&m.sig, &no_vote_signing_bytes(m.round, m.target_leader))
        {
            return;
        }
        let key = (m.round, m.target_leader);
        let quorum = self.quorum();
        let signers = self.no_votes.entry(key).or_default();
        signers.insert(m.source);
        if signers.len() >= quorum && !self.nvcs.contains_key(&key) {
            let agg = AggregateSignature {
                signers: signers.clone(),
                content_digest: Digest::of(&no_vote_signing_bytes(m.round, m.target_leader)),
            };
            self.store_nvc(NoVoteCertificate {
                round: m.round,
                target_leader: m.target_leader,
                agg,
            });
        }
    }

    pub(super) fn on_nvc(&mut self, c: NoVoteCertificate) {
        if self.is_multi() && self.valid_nvc(&c) {
            self.store_nvc(c);
        }
    }

    fn store_nvc(&mut self, c: NoVoteCertificate) {
        let key = (c.round, c.target_leader);
        if !self.nvcs.contains_key(&key) {
            self.emit(NodeEvent::NvcStored {
                round: c.round,
                target: c.target_leader,
            });
            self.nvcs.insert(key, c);
        }
    }
}
