//! Canonical binary encoding, used both for digests and as the wire format.
//!
//! Every message starts with a one-byte kind tag. Integers are little endian,
//! variable-length fields are prefixed with a `u32` length, and sets are
//! written in ascending order. Decoding rejects anything that the encoder
//! could not have produced, so the encoding is injective on valid messages.

use std::collections::BTreeSet;
use std::fmt;

use bytes::Bytes;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{AggregateSignature, Signature};
use crate::types::{
    Block, CertRole, CertVariant, Digest, NoVoteCertificate, NoVoteMessage, PartyId, Round,
    TimeoutCertificate, TimeoutMessage, Transaction, Vertex, VertexId, Vote, VoteCertificate,
    VoteContent,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MessageKind {
    Send = 0x01,
    Echo = 0x02,
    Ready = 0x03,
    Ack = 0x04,
    Cert = 0x05,
    Vote = 0x10,
    Timeout = 0x11,
    Tc = 0x12,
    Pvc = 0x13,
    Npvc = 0x14,
    Cvc = 0x15,
    NoVote = 0x16,
    Nvc = 0x17,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Send,
        MessageKind::Echo,
        MessageKind::Ready,
        MessageKind::Ack,
        MessageKind::Cert,
        MessageKind::Vote,
        MessageKind::Timeout,
        MessageKind::Tc,
        MessageKind::Pvc,
        MessageKind::Npvc,
        MessageKind::Cvc,
        MessageKind::NoVote,
        MessageKind::Nvc,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Send => "send",
            MessageKind::Echo => "echo",
            MessageKind::Ready => "ready",
            MessageKind::Ack => "ack",
            MessageKind::Cert => "cert",
            MessageKind::Vote => "vote",
            MessageKind::Timeout => "timeout",
            MessageKind::Tc => "tc",
            MessageKind::Pvc => "pvc",
            MessageKind::Npvc => "npvc",
            MessageKind::Cvc => "cvc",
            MessageKind::NoVote => "no_vote",
            MessageKind::Nvc => "nvc",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const VERTEX_TAG: u8 = 0x20;

/// Reliable-broadcast traffic. The sender of a `Send` is the transport-level
/// source; every other variant names the instance's sender explicitly.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RbcMessage {
    Send {
        round: Round,
        payload: Bytes,
    },
    /// Bracha echoes carry the payload; fast-path echoes carry only the digest.
    Echo {
        sender: PartyId,
        round: Round,
        digest: Digest,
        payload: Option<Bytes>,
    },
    Ready {
        sender: PartyId,
        round: Round,
        digest: Digest,
    },
    Ack {
        sender: PartyId,
        round: Round,
        digest: Digest,
        sig: Signature,
    },
    Cert {
        sender: PartyId,
        round: Round,
        payload: Bytes,
        agg: AggregateSignature,
    },
}

impl RbcMessage {
    pub fn round(&self) -> Round {
        match self {
            RbcMessage::Send { round, .. }
            | RbcMessage::Echo { round, .. }
            | RbcMessage::Ready { round, .. }
            | RbcMessage::Ack { round, .. }
            | RbcMessage::Cert { round, .. } => *round,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Message {
    Rbc(RbcMessage),
    Vote(Vote),
    Timeout(TimeoutMessage),
    Tc(TimeoutCertificate),
    VoteCert(VoteCertificate),
    NoVote(NoVoteMessage),
    Nvc(NoVoteCertificate),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Rbc(RbcMessage::Send { .. }) => MessageKind::Send,
            Message::Rbc(RbcMessage::Echo { .. }) => MessageKind::Echo,
            Message::Rbc(RbcMessage::Ready { .. }) => MessageKind::Ready,
            Message::Rbc(RbcMessage::Ack { .. }) => MessageKind::Ack,
            Message::Rbc(RbcMessage::Cert { .. }) => MessageKind::Cert,
            Message::Vote(_) => MessageKind::Vote,
            Message::Timeout(_) => MessageKind::Timeout,
            Message::Tc(_) => MessageKind::Tc,
            Message::VoteCert(c) => match c.role {
                CertRole::Propose => MessageKind::Pvc,
                CertRole::NoPropose => MessageKind::Npvc,
                CertRole::Commit => MessageKind::Cvc,
            },
            Message::NoVote(_) => MessageKind::NoVote,
            Message::Nvc(_) => MessageKind::Nvc,
        }
    }

    /// Protocol round the message belongs to, used for per-round accounting.
    pub fn round(&self) -> Round {
        match self {
            Message::Rbc(m) => m.round(),
            Message::Vote(v) => v.round,
            Message::Timeout(t) => t.round,
            Message::Tc(t) => t.round,
            Message::VoteCert(c) => c.round,
            Message::NoVote(m) => m.round,
            Message::Nvc(c) => c.round,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input ended early")]
    Truncated,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("set elements are not strictly ascending")]
    Unsorted,
    #[error("invalid boolean byte {0}")]
    Bool(u8),
    #[error("filler bytes must be zero")]
    Filler,
    #[error("length {0} exceeds the remaining input")]
    Length(usize),
}

struct Writer(Vec<u8>);

impl Writer {
    fn with_capacity(cap: usize) -> Self {
        Writer(Vec::with_capacity(cap))
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn party(&mut self, p: PartyId) {
        self.u32(p.0);
    }
    fn digest(&mut self, d: &Digest) {
        self.0.extend_from_slice(&d.0);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn vertex_id(&mut self, id: &VertexId) {
        self.u64(id.round);
        self.party(id.source);
        self.digest(&id.digest);
    }
    fn ids(&mut self, ids: &BTreeSet<VertexId>) {
        self.len(ids.len());
        ids.iter().for_each(|id| self.vertex_id(id));
    }
    fn sig(&mut self, s: &Signature) {
        self.party(s.signer);
        self.digest(&s.content_digest);
    }
    fn agg(&mut self, a: &AggregateSignature) {
        self.digest(&a.content_digest);
        self.len(a.signers.len());
        a.signers.iter().for_each(|p| self.party(*p));
    }
    fn vote_content(&mut self, c: &VoteContent) {
        self.u64(c.round);
        self.bool(c.propose);
        self.ids(&c.strong_edges);
    }
    fn tc(&mut self, tc: &TimeoutCertificate) {
        self.u64(tc.round);
        self.agg(&tc.agg);
    }
    fn nvc(&mut self, c: &NoVoteCertificate) {
        self.u64(c.round);
        self.party(c.target_leader);
        self.agg(&c.agg);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(DecodeError::Bool(b)),
        }
    }
    fn party(&mut self) -> Result<PartyId, DecodeError> {
        Ok(PartyId(self.u32()?))
    }
    fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.take(32)?.try_into().expect("32 bytes")))
    }
    /// Reads a count and checks that at least `count * min_item` bytes remain,
    /// so corrupt lengths cannot trigger huge allocations.
    fn count(&mut self, min_item: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(DecodeError::Length(n));
        }
        Ok(n)
    }
    fn byte_range(&mut self) -> Result<(usize, usize), DecodeError> {
        let n = self.count(1)?;
        let start = self.pos;
        self.take(n)?;
        Ok((start, start + n))
    }
    fn vertex_id(&mut self) -> Result<VertexId, DecodeError> {
        Ok(VertexId {
            round: self.u64()?,
            source: self.party()?,
            digest: self.digest()?,
        })
    }
    fn sorted<T: Ord>(
        &mut self,
        min_item: usize,
        mut item: impl FnMut(&mut Self) -> Result<T, DecodeError>,
    ) -> Result<BTreeSet<T>, DecodeError> {
        let n = self.count(min_item)?;
        let mut out = BTreeSet::new();
        for _ in 0..n {
            let x = item(self)?;
            if out.last().is_some_and(|last| *last >= x) {
                return Err(DecodeError::Unsorted);
            }
            out.insert(x);
        }
        Ok(out)
    }
    fn ids(&mut self) -> Result<BTreeSet<VertexId>, DecodeError> {
        self.sorted(44, Self::vertex_id)
    }
    fn sig(&mut self) -> Result<Signature, DecodeError> {
        Ok(Signature {
            signer: self.party()?,
            content_digest: self.digest()?,
        })
    }
    fn agg(&mut self) -> Result<AggregateSignature, DecodeError> {
        let content_digest = self.digest()?;
        let signers = self.sorted(4, Self::party)?;
        Ok(AggregateSignature {
            signers,
            content_digest,
        })
    }
    fn vote_content(&mut self) -> Result<VoteContent, DecodeError> {
        Ok(VoteContent {
            round: self.u64()?,
            propose: self.bool()?,
            strong_edges: self.ids()?,
        })
    }
    fn tc(&mut self) -> Result<TimeoutCertificate, DecodeError> {
        Ok(TimeoutCertificate {
            round: self.u64()?,
            agg: self.agg()?,
        })
    }
    fn nvc(&mut self) -> Result<NoVoteCertificate, DecodeError> {
        Ok(NoVoteCertificate {
            round: self.u64()?,
            target_leader: self.party()?,
            agg: self.agg()?,
        })
    }
    fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// Canonical vertex encoding. The vertex digest is the hash of these bytes.
pub fn encode_vertex(v: &Vertex) -> Vec<u8> {
    let mut w = Writer::with_capacity(64 + v.block.filler as usize + 44 * v.strong_edges.len());
    w.u8(VERTEX_TAG);
    w.u64(v.round);
    w.party(v.source);
    w.len(v.block.txs.len());
    for tx in &v.block.txs {
        w.u64(tx.id);
        w.u64(tx.created_at);
    }
    w.u32(v.block.filler);
    w.0.resize(w.0.len() + v.block.filler as usize, 0);
    w.bool(v.propose);
    w.ids(&v.strong_edges);
    w.ids(&v.weak_edges);
    w.ids(&v.leader_edges);
    w.len(v.tcs.len());
    v.tcs.iter().for_each(|tc| w.tc(tc));
    match &v.nvc {
        None => w.u8(0),
        Some(c) => {
            w.u8(1);
            w.nvc(c);
        }
    }
    w.0
}

/// Decodes a vertex and derives its identity from the input bytes. No
/// schedule-dependent validation happens here.
pub fn decode_vertex(bytes: &[u8]) -> Result<Vertex, DecodeError> {
    decode_vertex_with_digest(bytes, Digest::of(bytes))
}

/// Like [`decode_vertex`], with `digest` already known to be the digest of
/// `bytes` (as reported by reliable broadcast).
pub fn decode_vertex_with_digest(bytes: &[u8], digest: Digest) -> Result<Vertex, DecodeError> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    if tag != VERTEX_TAG {
        return Err(DecodeError::UnknownTag(tag));
    }
    let round = r.u64()?;
    let source = r.party()?;
    let ntx = r.count(16)?;
    let mut txs = Vec::with_capacity(ntx);
    for _ in 0..ntx {
        txs.push(Transaction {
            id: r.u64()?,
            created_at: r.u64()?,
        });
    }
    let filler = r.u32()?;
    if r.take(filler as usize)?.iter().any(|b| *b != 0) {
        return Err(DecodeError::Filler);
    }
    let propose = r.bool()?;
    let strong_edges = r.ids()?;
    let weak_edges = r.ids()?;
    let leader_edges = r.ids()?;
    let ntc = r.count(44)?;
    let mut tcs = Vec::with_capacity(ntc);
    for _ in 0..ntc {
        tcs.push(r.tc()?);
    }
    let nvc = match r.u8()? {
        0 => None,
        1 => Some(r.nvc()?),
        b => return Err(DecodeError::Bool(b)),
    };
    r.finish()?;
    Ok(Vertex {
        round,
        source,
        block: Block { txs, filler },
        propose,
        strong_edges,
        weak_edges,
        leader_edges,
        tcs,
        nvc,
        id: VertexId {
            round,
            source,
            digest,
        },
    })
}

pub fn encode_vote_content(c: &VoteContent) -> Vec<u8> {
    let mut w = Writer::with_capacity(16 + 44 * c.strong_edges.len());
    w.0.extend_from_slice(b"angelfish/vote");
    w.vote_content(c);
    w.0
}

/// Bytes a party signs when acknowledging `digest` as the round-`round`
/// payload of `sender` in the certified two-step broadcast.
pub fn ack_signing_bytes(sender: PartyId, round: Round, digest: &Digest) -> Vec<u8> {
    let mut w = Writer::with_capacity(64);
    w.0.extend_from_slice(b"angelfish/ack");
    w.party(sender);
    w.u64(round);
    w.digest(digest);
    w.0
}

pub fn encode_message(m: &Message) -> Bytes {
    let mut w = Writer::with_capacity(64);
    w.u8(m.kind() as u8);
    match m {
        Message::Rbc(rbc) => match rbc {
            RbcMessage::Send { round, payload } => {
                w.u64(*round);
                w.bytes(payload);
            }
            RbcMessage::Echo {
                sender,
                round,
                digest,
                payload,
            } => {
                w.party(*sender);
                w.u64(*round);
                w.digest(digest);
                match payload {
                    None => w.u8(0),
                    Some(p) => {
                        w.u8(1);
                        w.bytes(p);
                    }
                }
            }
            RbcMessage::Ready {
                sender,
                round,
                digest,
            } => {
                w.party(*sender);
                w.u64(*round);
                w.digest(digest);
            }
            RbcMessage::Ack {
                sender,
                round,
                digest,
                sig,
            } => {
                w.party(*sender);
                w.u64(*round);
                w.digest(digest);
                w.sig(sig);
            }
            RbcMessage::Cert {
                sender,
                round,
                payload,
                agg,
            } => {
                w.party(*sender);
                w.u64(*round);
                w.bytes(payload);
                w.agg(agg);
            }
        },
        Message::Vote(v) => {
            w.party(v.source);
            w.u64(v.round);
            w.bool(v.propose);
            w.ids(&v.strong_edges);
            w.sig(&v.sig);
        }
        Message::Timeout(t) => {
            w.party(t.source);
            w.u64(t.round);
            w.sig(&t.sig);
        }
        Message::Tc(tc) => w.tc(tc),
        Message::VoteCert(c) => {
            w.u64(c.round);
            w.party(c.issuer);
            w.len(c.variants.len());
            for var in &c.variants {
                w.vote_content(&var.content);
                w.agg(&var.agg);
            }
        }
        Message::NoVote(m) => {
            w.party(m.source);
            w.u64(m.round);
            w.party(m.target_leader);
            w.sig(&m.sig);
        }
        Message::Nvc(c) => w.nvc(c),
    }
    Bytes::from(w.0)
}

/// Decodes a wire message. Payload fields are zero-copy slices of `bytes`.
pub fn decode_message(bytes: &Bytes) -> Result<Message, DecodeError> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    let kind = MessageKind::from_tag(tag).ok_or(DecodeError::UnknownTag(tag))?;
    let slice = |(a, b): (usize, usize)| bytes.slice(a..b);
    let msg = match kind {
        MessageKind::Send => {
            let round = r.u64()?;
            let payload = slice(r.byte_range()?);
            Message::Rbc(RbcMessage::Send { round, payload })
        }
        MessageKind::Echo => {
            let sender = r.party()?;
            let round = r.u64()?;
            let digest = r.digest()?;
            let payload = match r.u8()? {
                0 => None,
                1 => Some(slice(r.byte_range()?)),
                b => return Err(DecodeError::Bool(b)),
            };
            Message::Rbc(RbcMessage::Echo {
                sender,
                round,
                digest,
                payload,
            })
        }
        MessageKind::Ready => Message::Rbc(RbcMessage::Ready {
            sender: r.party()?,
            round: r.u64()?,
            digest: r.digest()?,
        }),
        MessageKind::Ack => Message::Rbc(RbcMessage::Ack {
            sender: r.party()?,
            round: r.u64()?,
            digest: r.digest()?,
            sig: r.sig()?,
        }),
        MessageKind::Cert => {
            let sender = r.party()?;
            let round = r.u64()?;
            let payload = slice(r.byte_range()?);
            let agg = r.agg()?;
            Message::Rbc(RbcMessage::Cert {
                sender,
                round,
                payload,
                agg,
            })
        }
        MessageKind::Vote => Message::Vote(Vote {
            source: r.party()?,
            round: r.u64()?,
            propose: r.bool()?,
            strong_edges: r.ids()?,
            sig: r.sig()?,
        }),
        MessageKind::Timeout => Message::Timeout(TimeoutMessage {
            source: r.party()?,
            round: r.u64()?,
            sig: r.sig()?,
        }),
        MessageKind::Tc => Message::Tc(r.tc()?),
        MessageKind::Pvc | MessageKind::Npvc | MessageKind::Cvc => {
            let round = r.u64()?;
            let issuer = r.party()?;
            let n = r.count(45)?;
            let mut variants = Vec::with_capacity(n);
            for _ in 0..n {
                variants.push(CertVariant {
                    content: r.vote_content()?,
                    agg: r.agg()?,
                });
            }
            let role = match kind {
                MessageKind::Pvc => CertRole::Propose,
                MessageKind::Npvc => CertRole::NoPropose,
                _ => CertRole::Commit,
            };
            Message::VoteCert(VoteCertificate {
                round,
                issuer,
                role,
                variants,
            })
        }
        MessageKind::NoVote => Message::NoVote(NoVoteMessage {
            source: r.party()?,
            round: r.u64()?,
            target_leader: r.party()?,
            sig: r.sig()?,
        }),
        MessageKind::Nvc => Message::Nvc(r.nvc()?),
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{aggregate, Keyring};
    use crate::schedule::LeaderSchedule;
    use crate::types::{timeout_signing_bytes, VertexDraft};
    use proptest::prelude::*;

    fn arb_digest() -> impl Strategy<Value = Digest> + Clone {
        any::<[u8; 32]>().prop_map(Digest)
    }

    fn arb_id(round: Round) -> impl Strategy<Value = VertexId> {
        (0u32..7, arb_digest()).prop_map(move |(s, d)| VertexId {
            round,
            source: PartyId(s),
            digest: d,
        })
    }

    fn arb_agg() -> impl Strategy<Value = AggregateSignature> + Clone {
        (arb_digest(), proptest::collection::btree_set(0u32..7, 1..7)).prop_map(|(d, s)| {
            AggregateSignature {
                content_digest: d,
                signers: s.into_iter().map(PartyId).collect(),
            }
        })
    }

    /// Random structurally valid non-leader vertex at round 3 (n = 7, round robin).
    fn arb_vertex() -> impl Strategy<Value = Vertex> {
        (
            proptest::collection::vec((any::<u64>(), any::<u64>()), 0..4),
            0u32..64,
            any::<bool>(),
            proptest::collection::btree_map(0u32..7, arb_digest(), 0..7),
            proptest::collection::btree_set(arb_id(1), 0..3),
            0u32..7,
        )
            .prop_filter_map(
                "leader of round 3 needs certificates",
                |(txs, filler, propose, strong, weak, src)| {
                    if src == 3 {
                        return None;
                    }
                    let mut d = VertexDraft::new(3, PartyId(src));
                    d.block = Block {
                        txs: txs
                            .into_iter()
                            .map(|(id, created_at)| Transaction { id, created_at })
                            .collect(),
                        filler,
                    };
                    d.propose = propose;
                    d.strong_edges = strong
                        .into_iter()
                        .map(|(s, dg)| VertexId {
                            round: 2,
                            source: PartyId(s),
                            digest: dg,
                        })
                        .collect();
                    d.weak_edges = weak;
                    d.seal(&LeaderSchedule::new(7, 0, 1)).ok()
                },
            )
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let payload = proptest::collection::vec(any::<u8>(), 0..40).prop_map(Bytes::from);
        let sig = (0u32..7, arb_digest()).prop_map(|(s, d)| Signature {
            signer: PartyId(s),
            content_digest: d,
        });
        prop_oneof![
            (any::<u64>(), payload.clone())
                .prop_map(|(round, payload)| Message::Rbc(RbcMessage::Send { round, payload })),
            (
                0u32..7,
                any::<u64>(),
                arb_digest(),
                proptest::option::of(payload.clone())
            )
                .prop_map(|(s, round, digest, payload)| {
                    Message::Rbc(RbcMessage::Echo {
                        sender: PartyId(s),
                        round,
                        digest,
                        payload,
                    })
                }),
            (0u32..7, any::<u64>(), arb_digest()).prop_map(|(s, round, digest)| Message::Rbc(
                RbcMessage::Ready {
                    sender: PartyId(s),
                    round,
                    digest
                }
            )),
            (0u32..7, any::<u64>(), arb_digest(), sig.clone()).prop_map(
                |(s, round, digest, sig)| Message::Rbc(RbcMessage::Ack {
                    sender: PartyId(s),
                    round,
                    digest,
                    sig
                })
            ),
            (0u32..7, any::<u64>(), payload, arb_agg()).prop_map(|(s, round, payload, agg)| {
                Message::Rbc(RbcMessage::Cert {
                    sender: PartyId(s),
                    round,
                    payload,
                    agg,
                })
            }),
            (
                0u32..7,
                2u64..100,
                any::<bool>(),
                proptest::option::of(arb_digest()),
                sig.clone()
            )
                .prop_map(|(s, round, propose, e, sig)| {
                    let strong_edges = e
                        .map(|d| VertexId {
                            round: round - 1,
                            source: PartyId(1),
                            digest: d,
                        })
                        .into_iter()
                        .collect();
                    Message::Vote(Vote {
                        round,
                        source: PartyId(s),
                        propose,
                        strong_edges,
                        sig,
                    })
                }),
            (0u32..7, any::<u64>(), sig.clone()).prop_map(|(s, round, sig)| Message::Timeout(
                TimeoutMessage {
                    round,
                    source: PartyId(s),
                    sig
                }
            )),
            (any::<u64>(), arb_agg())
                .prop_map(|(round, agg)| Message::Tc(TimeoutCertificate { round, agg })),
            (
                any::<u64>(),
                0u32..7,
                0usize..3,
                proptest::collection::vec((any::<bool>(), arb_agg()), 1..4)
            )
                .prop_map(|(round, issuer, role, vars)| {
                    let role = [CertRole::Propose, CertRole::NoPropose, CertRole::Commit][role];
                    let variants = vars
                        .into_iter()
                        .map(|(propose, agg)| CertVariant {
                            content: VoteContent {
                                round,
                                propose,
                                strong_edges: BTreeSet::new(),
                            },
                            agg,
                        })
                        .collect();
                    Message::VoteCert(VoteCertificate {
                        round,
                        issuer: PartyId(issuer),
                        role,
                        variants,
                    })
                }),
            (0u32..7, any::<u64>(), 0u32..7, sig).prop_map(|(s, round, t, sig)| {
                Message::NoVote(NoVoteMessage {
                    round,
                    target_leader: PartyId(t),
                    source: PartyId(s),
                    sig,
                })
            }),
            (any::<u64>(), 0u32..7, arb_agg()).prop_map(|(round, t, agg)| Message::Nvc(
                NoVoteCertificate {
                    round,
                    target_leader: PartyId(t),
                    agg
                }
            )),
        ]
    }

    #[test]
    fn leader_vertex_with_certificates_round_trips() {
        let keys = Keyring::new(4);
        let tc = |r| {
            let sigs: Vec<_> = (0..3)
                .map(|i| keys.sign(PartyId(i), &timeout_signing_bytes(r)).unwrap())
                .collect();
            TimeoutCertificate {
                round: r,
                agg: aggregate(&sigs).unwrap(),
            }
        };
        let mut d = VertexDraft::new(5, PartyId(1));
        d.leader_edges.insert(VertexId {
            round: 2,
            source: PartyId(2),
            digest: Digest::of(b"l"),
        });
        d.tcs = vec![tc(3), tc(4)];
        d.block.filler = 16;
        let v = d.seal(&LeaderSchedule::new(4, 0, 1)).unwrap();
        let bytes = encode_vertex(&v);
        let back = decode_vertex(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id(), v.id());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let v = VertexDraft::new(1, PartyId(0))
            .seal(&LeaderSchedule::new(4, 0, 1))
            .unwrap();
        let mut bytes = encode_vertex(&v);
        bytes.push(0);
        assert_eq!(decode_vertex(&bytes), Err(DecodeError::Trailing(1)));
        assert_eq!(decode_vertex(&bytes[..5]), Err(DecodeError::Truncated));
        assert_eq!(
            decode_message(&Bytes::from_static(&[0x7f])),
            Err(DecodeError::UnknownTag(0x7f))
        );
    }

    #[test]
    fn unsorted_sets_are_rejected() {
        let a = AggregateSignature {
            content_digest: Digest::default(),
            signers: [PartyId(1), PartyId(2)].into(),
        };
        let mut bytes =
            encode_message(&Message::Tc(TimeoutCertificate { round: 1, agg: a })).to_vec();
        let n = bytes.len();
        bytes[n - 8..n - 4].copy_from_slice(&2u32.to_le_bytes());
        bytes[n - 4..].copy_from_slice(&1u32.to_le_bytes());
        assert_eq!(
            decode_message(&Bytes::from(bytes)),
            Err(DecodeError::Unsorted)
        );
    }

    proptest! {
        #[test]
        fn vertex_round_trip_and_digest(v in arb_vertex()) {
            let bytes = encode_vertex(&v);
            let back = decode_vertex(&bytes).unwrap();
            prop_assert_eq!(back.id(), v.id());
            prop_assert_eq!(encode_vertex(&back), bytes);
            prop_assert_eq!(back, v);
        }

        #[test]
        fn digest_equality_matches_encoding_equality(a in arb_vertex(), b in arb_vertex()) {
            prop_assert_eq!(a.id() == b.id(), encode_vertex(&a) == encode_vertex(&b));
        }

        #[test]
        fn message_round_trip(m in arb_message()) {
            let bytes = encode_message(&m);
            prop_assert_eq!(bytes[0], m.kind() as u8);
            let back = decode_message(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_message(&back), bytes);
        }

        #[test]
        fn decoding_garbage_never_panics(data in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_message(&Bytes::from(data.clone()));
            let _ = decode_vertex(&data);
        }
    }
}
