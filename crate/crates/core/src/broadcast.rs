//! Best-effort and reliable broadcast as sans-IO event handlers.
//!
//! An [`RbcEngine`] owns every reliable-broadcast instance seen by one party,
//! keyed by (sender, round). Handlers return the messages to transmit and the
//! events to surface to the protocol layer. Three instantiations exist:
//!
//! * `Bracha`: SEND, ECHO (with payload) and READY. READY after `n - f`
//!   matching echoes or `f + 1` readys; delivery after `n - f` readys once the
//!   payload is known.
//! * `TwoStepCertified`: receivers ACK the first SEND back to the sender, which
//!   multicasts a CERT aggregating `n - f` acks together with the payload. A
//!   valid CERT delivers and is forwarded once.
//! * `FastPath`: optimistic two-step variant. SEND triggers a digest-only ECHO
//!   and `n - f` matching echoes deliver. It is not Byzantine-total and exists
//!   for latency measurement.
//!
//! `FirstMessage` fires once per instance on the first payload-bearing
//! message authenticated by the sender (SEND or CERT), or at delivery if
//! neither arrived first.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use tracing::debug;

use crate::codec::{ack_signing_bytes, RbcMessage};
use crate::crypto::{aggregate, Keyring, Signature};
use crate::types::{Digest, PartyId, RbcKind, Round};

/// Destination of an outgoing message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    /// Every party, the sender included.
    All,
    One(PartyId),
}

/// Expands a best-effort multicast into one transmission per party.
pub fn beb_multicast<M: Clone>(n: usize, msg: &M) -> Vec<(PartyId, M)> {
    (0..n).map(|i| (PartyId::from(i), msg.clone())).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RbcEvent {
    FirstMessage {
        sender: PartyId,
        round: Round,
        digest: Digest,
        payload: Bytes,
    },
    Delivered {
        sender: PartyId,
        round: Round,
        digest: Digest,
        payload: Bytes,
    },
    Equivocation {
        sender: PartyId,
        round: Round,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RbcOutput {
    pub sends: Vec<(Dest, RbcMessage)>,
    pub events: Vec<RbcEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RbcInstance {
    pub sender: PartyId,
    pub round: Round,
    payloads: BTreeMap<Digest, Bytes>,
    first_seen: Option<Digest>,
    delivered: Option<Digest>,
    equivocation: bool,
    echoed: bool,
    echoes: BTreeMap<Digest, BTreeSet<PartyId>>,
    readied: bool,
    readys: BTreeMap<Digest, BTreeSet<PartyId>>,
    acks: BTreeMap<PartyId, Signature>,
    own: Option<Digest>,
    cert_sent: bool,
    cert_forwarded: bool,
}

impl RbcInstance {
    fn new(sender: PartyId, round: Round) -> Self {
        Self {
            sender,
            round,
            payloads: BTreeMap::new(),
            first_seen: None,
            delivered: None,
            equivocation: false,
            echoed: false,
            echoes: BTreeMap::new(),
            readied: false,
            readys: BTreeMap::new(),
            acks: BTreeMap::new(),
            own: None,
            cert_sent: false,
            cert_forwarded: false,
        }
    }

    pub fn first_seen(&self) -> Option<Digest> {
        self.first_seen
    }

    pub fn delivered(&self) -> Option<Digest> {
        self.delivered
    }

    pub fn equivocation(&self) -> bool {
        self.equivocation
    }

    fn learn(&mut self, digest: Digest, payload: &Bytes, out: &mut RbcOutput) {
        if self.payloads.contains_key(&digest) {
            return;
        }
        if !self.payloads.is_empty() && !self.equivocation {
            self.equivocation = true;
            out.events.push(RbcEvent::Equivocation {
                sender: self.sender,
                round: self.round,
            });
        }
        self.payloads.insert(digest, payload.clone());
    }

    fn first(&mut self, digest: Digest, out: &mut RbcOutput) {
        if self.first_seen.is_none() {
            self.first_seen = Some(digest);
            out.events.push(RbcEvent::FirstMessage {
                sender: self.sender,
                round: self.round,
                digest,
                payload: self.payloads[&digest].clone(),
            });
        }
    }

    fn deliver(&mut self, digest: Digest, out: &mut RbcOutput) {
        if self.delivered.is_some() || !self.payloads.contains_key(&digest) {
            return;
        }
        self.first(digest, out);
        self.delivered = Some(digest);
        out.events.push(RbcEvent::Delivered {
            sender: self.sender,
            round: self.round,
            digest,
            payload: self.payloads[&digest].clone(),
        });
    }
}

/// All reliable-broadcast instances observed by one party.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RbcEngine {
    me: PartyId,
    n: usize,
    f: usize,
    kind: RbcKind,
    keys: Keyring,
    instances: BTreeMap<(PartyId, Round), RbcInstance>,
}

impl RbcEngine {
    pub fn new(me: PartyId, n: usize, f: usize, kind: RbcKind) -> Self {
        Self {
            me,
            n,
            f,
            kind,
            keys: Keyring::new(n),
            instances: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> RbcKind {
        self.kind
    }

    pub fn instance(&self, sender: PartyId, round: Round) -> Option<&RbcInstance> {
        self.instances.get(&(sender, round))
    }

    pub fn instances(&self) -> impl Iterator<Item = &RbcInstance> {
        self.instances.values()
    }

    fn quorum(&self) -> usize {
        self.n - self.f
    }

    fn entry(&mut self, sender: PartyId, round: Round) -> &mut RbcInstance {
        self.instances
            .entry((sender, round))
            .or_insert_with(|| RbcInstance::new(sender, round))
    }

    /// Starts an instance with this party as sender. The SEND also reaches
    /// the sender itself through the transport.
    pub fn broadcast(&mut self, round: Round, payload: Bytes) -> RbcOutput {
        let digest = Digest::of(&payload);
        let me = self.me;
        self.entry(me, round).own = Some(digest);
        RbcOutput {
            sends: vec![(Dest::All, RbcMessage::Send { round, payload })],
            events: vec![],
        }
    }

    pub fn on_message(&mut self, from: PartyId, msg: RbcMessage) -> RbcOutput {
        let mut out = RbcOutput::default();
        if from.index() >= self.n {
            return out;
        }
        match msg {
            RbcMessage::Send { round, payload } => self.on_send(from, round, payload, &mut out),
            RbcMessage::Echo {
                sender,
                round,
                digest,
                payload,
            } => {
                if sender.index() < self.n && self.kind != RbcKind::TwoStepCertified {
                    self.on_echo(from, sender, round, digest, payload, &mut out);
                }
            }
            RbcMessage::Ready {
                sender,
                round,
                digest,
            } => {
                if sender.index() < self.n && self.kind == RbcKind::Bracha {
                    self.on_ready(from, sender, round, digest, &mut out);
                }
            }
            RbcMessage::Ack {
                sender,
                round,
                digest,
                sig,
            } => {
                if sender == self.me && self.kind == RbcKind::TwoStepCertified {
                    self.on_ack(from, round, digest, sig, &mut out);
                }
            }
            RbcMessage::Cert {
                sender,
                round,
                payload,
                agg,
            } => {
                if sender.index() < self.n && self.kind == RbcKind::TwoStepCertified {
                    let digest = Digest::of(&payload);
                    let valid = agg.signers.len() >= self.quorum()
                        && self
                            .keys
                            .verify_aggregate(&agg, &ack_signing_bytes(sender, round, &digest));
                    if !valid {
                        debug!(me = %self.me, %sender, round, "dropping invalid certificate");
                        return out;
                    }
                    let inst = self.entry(sender, round);
                    inst.learn(digest, &payload, &mut out);
                    inst.deliver(digest, &mut out);
                    if !inst.cert_forwarded {
                        inst.cert_forwarded = true;
                        out.sends.push((
                            Dest::All,
                            RbcMessage::Cert {
                                sender,
                                round,
                                payload,
                                agg,
                            },
                        ));
                    }
                }
            }
        }
        out
    }

    fn on_send(&mut self, sender: PartyId, round: Round, payload: Bytes, out: &mut RbcOutput) {
        let digest = Digest::of(&payload);
        let kind = self.kind;
        let me = self.me;
        let keys = self.keys;
        let quorum = self.quorum();
        let inst = self.entry(sender, round);
        inst.learn(digest, &payload, out);
        if inst.echoed {
            return;
        }
        inst.echoed = true;
        inst.first(digest, out);
        match kind {
            RbcKind::Bracha => {
                out.sends.push((
                    Dest::All,
                    RbcMessage::Echo {
                        sender,
                        round,
                        digest,
                        payload: Some(payload),
                    },
                ));
            }
            RbcKind::FastPath => {
                out.sends.push((
                    Dest::All,
                    RbcMessage::Echo {
                        sender,
                        round,
                        digest,
                        payload: None,
                    },
                ));
                if inst.echoes.get(&digest).is_some_and(|e| e.len() >= quorum) {
                    inst.deliver(digest, out);
                }
            }
            RbcKind::TwoStepCertified => {
                let sig = keys
                    .sign(me, &ack_signing_bytes(sender, round, &digest))
                    .expect("own index is valid");
                out.sends.push((
                    Dest::One(sender),
                    RbcMessage::Ack {
                        sender,
                        round,
                        digest,
                        sig,
                    },
                ));
            }
        }
    }

    fn on_echo(
        &mut self,
        from: PartyId,
        sender: PartyId,
        round: Round,
        digest: Digest,
        payload: Option<Bytes>,
        out: &mut RbcOutput,
    ) {
        let quorum = self.quorum();
        let kind = self.kind;
        let inst = self.entry(sender, round);
        if let Some(p) = payload {
            if !inst.payloads.contains_key(&digest) {
                if Digest::of(&p) != digest {
                    return;
                }
                inst.learn(digest, &p, out);
            }
        }
        let echoes = inst.echoes.entry(digest).or_default();
        if !echoes.insert(from) {
            return;
        }
        let count = echoes.len();
        match kind {
            RbcKind::FastPath => {
                if count >= quorum {
                    inst.deliver(digest, out);
                }
            }
            _ => {
                if count >= quorum && !inst.readied {
                    inst.readied = true;
                    out.sends.push((
                        Dest::All,
                        RbcMessage::Ready {
                            sender,
                            round,
                            digest,
                        },
                    ));
                }
                // A payload learned from this echo may complete a pending delivery.
                if inst.readys.get(&digest).is_some_and(|r| r.len() >= quorum) {
                    inst.deliver(digest, out);
                }
            }
        }
    }

    fn on_ready(
        &mut self,
        from: PartyId,
        sender: PartyId,
        round: Round,
        digest: Digest,
        out: &mut RbcOutput,
    ) {
        let quorum = self.quorum();
        let amplify = self.f + 1;
        let inst = self.entry(sender, round);
        let readys = inst.readys.entry(digest).or_default();
        if !readys.insert(from) {
            return;
        }
        let count = readys.len();
        if count >= amplify && !inst.readied {
            inst.readied = true;
            out.sends.push((
                Dest::All,
                RbcMessage::Ready {
                    sender,
                    round,
                    digest,
                },
            ));
        }
        if count >= quorum {
            inst.deliver(digest, out);
        }
    }

    fn on_ack(
        &mut self,
        from: PartyId,
        round: Round,
        digest: Digest,
        sig: Signature,
        out: &mut RbcOutput,
    ) {
        let me = self.me;
        let quorum = self.quorum();
        let keys = self.keys;
        let Some(inst) = self.instances.get_mut(&(me, round)) else {
            return;
        };
        if inst.own != Some(digest)
            || sig.signer != from
            || !keys.verify(&sig, &ack_signing_bytes(me, round, &digest))
        {
            return;
        }
        inst.acks.insert(from, sig);
        if inst.acks.len() >= quorum && !inst.cert_sent {
            let Some(payload) = inst.payloads.get(&digest).cloned() else {
                return;
            };
            inst.cert_sent = true;
            let agg = aggregate(inst.acks.values()).expect("acks share one content");
            out.sends.push((
                Dest::All,
                RbcMessage::Cert {
                    sender: me,
                    round,
                    payload,
                    agg,
                },
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Delivers every message in FIFO order until quiescence and returns each
    /// party's delivered digest for (sender 0, round 1).
    fn run_fifo(kind: RbcKind, n: usize) -> (Vec<RbcEngine>, Vec<Vec<RbcEvent>>) {
        let f = (n - 1) / 3;
        let mut engines: Vec<_> = (0..n)
            .map(|i| RbcEngine::new(PartyId::from(i), n, f, kind))
            .collect();
        let mut events = vec![Vec::new(); n];
        let mut queue = VecDeque::new();
        let out = engines[0].broadcast(1, Bytes::from_static(b"payload"));
        let push = |queue: &mut VecDeque<_>, from: usize, out: RbcOutput| {
            for (dest, m) in out.sends {
                match dest {
                    Dest::All => (0..n).for_each(|to| queue.push_back((from, to, m.clone()))),
                    Dest::One(p) => queue.push_back((from, p.index(), m)),
                }
            }
        };
        push(&mut queue, 0, out);
        while let Some((from, to, m)) = queue.pop_front() {
            let out = engines[to].on_message(PartyId::from(from), m);
            events[to].extend(out.events.iter().cloned());
            push(&mut queue, to, out);
        }
        (engines, events)
    }

    #[test]
    fn beb_reaches_every_party() {
        assert_eq!(beb_multicast(4, &"m").len(), 4);
    }

    #[test]
    fn honest_sender_delivers_everywhere() {
        for kind in [
            RbcKind::Bracha,
            RbcKind::TwoStepCertified,
            RbcKind::FastPath,
        ] {
            for n in [4, 7] {
                let (engines, events) = run_fifo(kind, n);
                for (i, e) in engines.iter().enumerate() {
                    let inst = e.instance(PartyId(0), 1).unwrap();
                    assert_eq!(
                        inst.delivered(),
                        Some(Digest::of(b"payload")),
                        "{kind:?} party {i}"
                    );
                    let firsts = events[i]
                        .iter()
                        .filter(|e| matches!(e, RbcEvent::FirstMessage { .. }))
                        .count();
                    let delivered = events[i]
                        .iter()
                        .filter(|e| matches!(e, RbcEvent::Delivered { .. }))
                        .count();
                    assert_eq!((firsts, delivered), (1, 1));
                    let first_pos = events[i]
                        .iter()
                        .position(|e| matches!(e, RbcEvent::FirstMessage { .. }));
                    let deliver_pos = events[i]
                        .iter()
                        .position(|e| matches!(e, RbcEvent::Delivered { .. }));
                    assert!(first_pos < deliver_pos);
                }
            }
        }
    }

    #[test]
    fn bracha_delivers_on_third_ready() {
        let n = 4;
        let mut e = RbcEngine::new(PartyId(2), n, 1, RbcKind::Bracha);
        let payload = Bytes::from_static(b"x");
        let d = Digest::of(&payload);
        e.on_message(PartyId(0), RbcMessage::Send { round: 1, payload });
        for (i, from) in [0u32, 1, 3].into_iter().enumerate() {
            let out = e.on_message(
                PartyId(from),
                RbcMessage::Ready {
                    sender: PartyId(0),
                    round: 1,
                    digest: d,
                },
            );
            let delivered = out
                .events
                .iter()
                .any(|e| matches!(e, RbcEvent::Delivered { .. }));
            assert_eq!(delivered, i == 2);
        }
    }

    #[test]
    fn echo_with_wrong_payload_is_ignored() {
        let mut e = RbcEngine::new(PartyId(2), 4, 1, RbcKind::Bracha);
        let out = e.on_message(
            PartyId(3),
            RbcMessage::Echo {
                sender: PartyId(0),
                round: 1,
                digest: Digest::of(b"a"),
                payload: Some(Bytes::from_static(b"b")),
            },
        );
        assert!(out.sends.is_empty() && out.events.is_empty());
    }

    #[test]
    fn conflicting_sends_flag_equivocation() {
        let mut e = RbcEngine::new(PartyId(2), 4, 1, RbcKind::Bracha);
        e.on_message(
            PartyId(0),
            RbcMessage::Send {
                round: 1,
                payload: Bytes::from_static(b"a"),
            },
        );
        let out = e.on_message(
            PartyId(0),
            RbcMessage::Send {
                round: 1,
                payload: Bytes::from_static(b"b"),
            },
        );
        assert!(out.events.contains(&RbcEvent::Equivocation {
            sender: PartyId(0),
            round: 1
        }));
        assert!(out.sends.is_empty(), "echo only once");
        assert!(e.instance(PartyId(0), 1).unwrap().equivocation());
    }

    #[test]
    fn certificate_below_quorum_is_rejected() {
        let keys = Keyring::new(4);
        let payload = Bytes::from_static(b"p");
        let d = Digest::of(&payload);
        let sigs: Vec<_> = (0..2)
            .map(|i| {
                keys.sign(PartyId(i), &ack_signing_bytes(PartyId(0), 1, &d))
                    .unwrap()
            })
            .collect();
        let agg = aggregate(&sigs).unwrap();
        let mut e = RbcEngine::new(PartyId(3), 4, 1, RbcKind::TwoStepCertified);
        let out = e.on_message(
            PartyId(0),
            RbcMessage::Cert {
                sender: PartyId(0),
                round: 1,
                payload,
                agg,
            },
        );
        assert!(out.events.is_empty());
    }
}
