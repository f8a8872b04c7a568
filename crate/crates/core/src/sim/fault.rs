//! Crash schedules and scripted Byzantine behaviors.
//!
//! A Byzantine party runs the honest state machine; its behavior rewrites
//! the outputs on their way to the network. Its own state never sees the
//! rewritten messages.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_vertex, encode_vertex, Message, RbcMessage};
use crate::crypto::Keyring;
use crate::types::{PartyId, Round, Vote, VoteContent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Sends one vertex to half of the parties and a variant to the rest.
    EquivocateVertex,
    /// Leaves `f` parties out of every vertex SEND.
    WithholdVertex,
    /// Announces opposite propose flags to the two halves of the parties.
    FalseProposeFlag,
    /// Votes for round `r + 1` as soon as it enters round `r`.
    PrematureVote,
    /// Sends nothing at all.
    Silent,
}

impl Behavior {
    pub const ALL: [Behavior; 5] = [
        Behavior::EquivocateVertex,
        Behavior::WithholdVertex,
        Behavior::FalseProposeFlag,
        Behavior::PrematureVote,
        Behavior::Silent,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub party: PartyId,
    pub at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScript {
    #[serde(default)]
    pub crashes: Vec<Crash>,
    #[serde(default)]
    pub byzantine: BTreeMap<PartyId, Behavior>,
}

impl FaultScript {
    pub fn none() -> Self {
        Self::default()
    }

    /// Crashes parties `0..count` at time `at`.
    pub fn crash_first(count: usize, at: u64) -> Self {
        Self {
            crashes: (0..count)
                .map(|i| Crash {
                    party: PartyId::from(i),
                    at,
                })
                .collect(),
            ..Self::default()
        }
    }

    /// Assigns `behavior` to parties `0..count`.
    pub fn byzantine_first(count: usize, behavior: Behavior) -> Self {
        Self {
            byzantine: (0..count).map(|i| (PartyId::from(i), behavior)).collect(),
            ..Self::default()
        }
    }

    pub fn faulty(&self) -> BTreeSet<PartyId> {
        self.crashes
            .iter()
            .map(|c| c.party)
            .chain(self.byzantine.keys().copied())
            .collect()
    }

    pub fn is_byzantine(&self, p: PartyId) -> bool {
        self.byzantine.contains_key(&p)
    }

    pub fn crash_time(&self, p: PartyId) -> Option<u64> {
        self.crashes
            .iter()
            .filter(|c| c.party == p)
            .map(|c| c.at)
            .min()
    }
}

/// A message addressed to an explicit receiver set.
pub(crate) type Addressed = (Vec<PartyId>, Message);

/// Applies `behavior` to one outgoing message of `me` addressed to `dests`.
pub(crate) fn transform(
    behavior: Behavior,
    me: PartyId,
    n: usize,
    f: usize,
    keys: &Keyring,
    dests: Vec<PartyId>,
    msg: Message,
) -> Vec<Addressed> {
    let half = |dests: &[PartyId]| -> (Vec<PartyId>, Vec<PartyId>) {
        dests.iter().partition(|p| p.index() < n / 2)
    };
    match (behavior, msg) {
        (Behavior::Silent, _) => Vec::new(),
        (Behavior::WithholdVertex, Message::Rbc(RbcMessage::Send { round, payload })) => {
            let skipped = withheld(me, n, f, round);
            let dests = dests.into_iter().filter(|p| !skipped.contains(p)).collect();
            vec![(dests, Message::Rbc(RbcMessage::Send { round, payload }))]
        }
        (Behavior::EquivocateVertex, Message::Rbc(RbcMessage::Send { round, payload })) => {
            let Some(variant) = rewrite_vertex(&payload, |d| d.block.filler += 1) else {
                return vec![(dests, Message::Rbc(RbcMessage::Send { round, payload }))];
            };
            split(
                half(&dests),
                Message::Rbc(RbcMessage::Send { round, payload }),
                Message::Rbc(RbcMessage::Send {
                    round,
                    payload: variant,
                }),
            )
        }
        (Behavior::FalseProposeFlag, Message::Rbc(RbcMessage::Send { round, payload })) => {
            let Some(variant) = rewrite_vertex(&payload, |d| d.propose = !d.propose) else {
                return vec![(dests, Message::Rbc(RbcMessage::Send { round, payload }))];
            };
            split(
                half(&dests),
                Message::Rbc(RbcMessage::Send { round, payload }),
                Message::Rbc(RbcMessage::Send {
                    round,
                    payload: variant,
                }),
            )
        }
        (Behavior::FalseProposeFlag, Message::Vote(v)) if v.source == me => {
            let flipped = VoteContent {
                round: v.round,
                propose: !v.propose,
                strong_edges: v.strong_edges.clone(),
            };
            let sig = keys
                .sign(me, &flipped.signing_bytes())
                .expect("own index is valid");
            let other = Vote {
                round: v.round,
                source: me,
                propose: flipped.propose,
                strong_edges: flipped.strong_edges,
                sig,
            };
            split(half(&dests), Message::Vote(v), Message::Vote(other))
        }
        (_, msg) => vec![(dests, msg)],
    }
}

/// The vote a premature voter sends for `round` right after entering the
/// round before it.
pub(crate) fn premature_vote(me: PartyId, keys: &Keyring, round: Round) -> Message {
    let content = VoteContent {
        round,
        propose: false,
        strong_edges: BTreeSet::new(),
    };
    let sig = keys
        .sign(me, &content.signing_bytes())
        .expect("own index is valid");
    Message::Vote(Vote {
        round,
        source: me,
        propose: false,
        strong_edges: BTreeSet::new(),
        sig,
    })
}

/// The `f` parties (never the sender) left out of a withheld SEND.
fn withheld(me: PartyId, n: usize, f: usize, round: Round) -> BTreeSet<PartyId> {
    (0..n)
        .map(|i| PartyId::from((i + round as usize) % n))
        .filter(|p| *p != me)
        .take(f)
        .collect()
}

fn rewrite_vertex(
    payload: &Bytes,
    edit: impl FnOnce(&mut crate::types::VertexDraft),
) -> Option<Bytes> {
    let v = decode_vertex(payload).ok()?;
    let mut d = v.to_draft();
    edit(&mut d);
    Some(Bytes::from(encode_vertex(&d.seal_unvalidated())))
}

fn split((a, b): (Vec<PartyId>, Vec<PartyId>), first: Message, second: Message) -> Vec<Addressed> {
    let mut out = Vec::new();
    if !a.is_empty() {
        out.push((a, first));
    }
    if !b.is_empty() {
        out.push((b, second));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Block, VertexDraft};

    fn send(propose: bool) -> Message {
        let mut d = VertexDraft::new(1, PartyId(0));
        d.propose = propose;
        d.block = Block::empty();
        Message::Rbc(RbcMessage::Send {
            round: 1,
            payload: Bytes::from(encode_vertex(&d.seal_unvalidated())),
        })
    }

    fn all(n: usize) -> Vec<PartyId> {
        (0..n).map(PartyId::from).collect()
    }

    #[test]
    fn silent_sends_nothing() {
        assert!(transform(
            Behavior::Silent,
            PartyId(0),
            4,
            1,
            &Keyring::new(4),
            all(4),
            send(true)
        )
        .is_empty());
    }

    #[test]
    fn withholding_skips_f_parties() {
        let out = transform(
            Behavior::WithholdVertex,
            PartyId(0),
            7,
            2,
            &Keyring::new(7),
            all(7),
            send(true),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0.len(), 5);
        assert!(out[0].0.contains(&PartyId(0)));
    }

    #[test]
    fn equivocation_splits_receivers_between_two_payloads() {
        let out = transform(
            Behavior::EquivocateVertex,
            PartyId(0),
            4,
            1,
            &Keyring::new(4),
            all(4),
            send(true),
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].0, vec![PartyId(0), PartyId(1)]);
        assert_ne!(out[0].1, out[1].1);
    }

    #[test]
    fn false_flag_flips_propose_for_one_half() {
        let out = transform(
            Behavior::FalseProposeFlag,
            PartyId(0),
            4,
            1,
            &Keyring::new(4),
            all(4),
            send(true),
        );
        let flags: Vec<bool> = out
            .iter()
            .map(|(_, m)| match m {
                Message::Rbc(RbcMessage::Send { payload, .. }) => {
                    decode_vertex(payload).unwrap().propose()
                }
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn fault_sets() {
        let mut s = FaultScript::crash_first(1, 0);
        s.byzantine.insert(PartyId(2), Behavior::Silent);
        assert_eq!(s.faulty().len(), 2);
        assert!(s.is_byzantine(PartyId(2)));
        assert_eq!(s.crash_time(PartyId(0)), Some(0));
    }
}
