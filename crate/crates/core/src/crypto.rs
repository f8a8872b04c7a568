//! Simulated signatures and multi-signatures.
//!
//! A signature is the pair (signer, digest of the signed bytes) and an
//! aggregate is a signer set over one digest. Verification checks committee
//! membership and digest equality, which is all the quorum logic relies on.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::types::{Digest, PartyId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature {
    pub signer: PartyId,
    pub content_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AggregateSignature {
    pub signers: BTreeSet<PartyId>,
    pub content_digest: Digest,
}

impl AggregateSignature {
    pub fn len(&self) -> usize {
        self.signers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signers.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("{0} is not a committee member")]
    UnknownSigner(PartyId),
    #[error("cannot aggregate an empty signature set")]
    Empty,
    #[error("signatures cover different contents")]
    MixedContent,
}

/// Committee of `n` parties able to sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Keyring {
    n: usize,
}

impl Keyring {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sign(&self, signer: PartyId, content: &[u8]) -> Result<Signature, CryptoError> {
        if signer.index() >= self.n {
            return Err(CryptoError::UnknownSigner(signer));
        }
        Ok(Signature {
            signer,
            content_digest: Digest::of(content),
        })
    }

    pub fn verify(&self, sig: &Signature, content: &[u8]) -> bool {
        sig.signer.index() < self.n && sig.content_digest == Digest::of(content)
    }

    /// Verifies against a digest the caller has already computed.
    pub fn verify_digest(&self, sig: &Signature, digest: &Digest) -> bool {
        sig.signer.index() < self.n && sig.content_digest == *digest
    }

    pub fn verify_aggregate(&self, agg: &AggregateSignature, content: &[u8]) -> bool {
        self.verify_aggregate_digest(agg, &Digest::of(content))
    }

    pub fn verify_aggregate_digest(&self, agg: &AggregateSignature, digest: &Digest) -> bool {
        !agg.signers.is_empty()
            && agg.content_digest == *digest
            && agg.signers.iter().all(|s| s.index() < self.n)
    }
}

pub fn aggregate<'a>(
    sigs: impl IntoIterator<Item = &'a Signature>,
) -> Result<AggregateSignature, CryptoError> {
    let mut iter = sigs.into_iter();
    let first = iter.next().ok_or(CryptoError::Empty)?;
    let mut agg = AggregateSignature {
        signers: BTreeSet::from([first.signer]),
        content_digest: first.content_digest,
    };
    for s in iter {
        if s.content_digest != agg.content_digest {
            return Err(CryptoError::MixedContent);
        }
        agg.signers.insert(s.signer);
    }
    Ok(agg)
}

pub fn merge_aggregates(
    a: &AggregateSignature,
    b: &AggregateSignature,
) -> Result<AggregateSignature, CryptoError> {
    if a.content_digest != b.content_digest {
        return Err(CryptoError::MixedContent);
    }
    Ok(AggregateSignature {
        signers: a.signers.union(&b.signers).copied().collect(),
        content_digest: a.content_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agg(signers: &[u32], content: &[u8]) -> AggregateSignature {
        let k = Keyring::new(64);
        let sigs: Vec<_> = signers
            .iter()
            .map(|s| k.sign(PartyId(*s), content).unwrap())
            .collect();
        aggregate(&sigs).unwrap()
    }

    #[test]
    fn sign_verify_round_trip() {
        let k = Keyring::new(4);
        let s = k.sign(PartyId(0), b"b").unwrap();
        assert!(k.verify(&s, b"b"));
        assert!(!k.verify(&s, b"b'"));
        assert_eq!(s, k.sign(PartyId(0), b"b").unwrap());
        assert_eq!(
            k.sign(PartyId(4), b"b"),
            Err(CryptoError::UnknownSigner(PartyId(4)))
        );
    }

    #[test]
    fn aggregation_rules() {
        let k = Keyring::new(4);
        let c1 = k.sign(PartyId(1), b"c").unwrap();
        let c2 = k.sign(PartyId(2), b"c").unwrap();
        let other = k.sign(PartyId(2), b"c'").unwrap();
        let a = aggregate(&[c1, c2]).unwrap();
        assert_eq!(a.signers, BTreeSet::from([PartyId(1), PartyId(2)]));
        assert!(k.verify_aggregate(&a, b"c"));
        assert!(!k.verify_aggregate(&a, b"c'"));
        assert_eq!(aggregate(&[c1, c1]).unwrap().len(), 1);
        assert_eq!(aggregate(&[c1, other]), Err(CryptoError::MixedContent));
        assert_eq!(aggregate(&[]), Err(CryptoError::Empty));
    }

    #[test]
    fn merge_is_union() {
        let m = merge_aggregates(&agg(&[1, 2], b"c"), &agg(&[2, 3], b"c")).unwrap();
        assert_eq!(
            m.signers,
            BTreeSet::from([PartyId(1), PartyId(2), PartyId(3)])
        );
        assert_eq!(
            merge_aggregates(&agg(&[1], b"c"), &agg(&[1], b"c"))
                .unwrap()
                .len(),
            1
        );
        assert!(merge_aggregates(&agg(&[1], b"c"), &agg(&[1], b"d")).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_associative_commutative_idempotent(
            a in proptest::collection::btree_set(0u32..64, 1..20),
            b in proptest::collection::btree_set(0u32..64, 1..20),
            c in proptest::collection::btree_set(0u32..64, 1..20),
        ) {
            let to = |s: &BTreeSet<u32>| agg(&s.iter().copied().collect::<Vec<_>>(), b"x");
            let (a, b, c) = (to(&a), to(&b), to(&c));
            let ab = merge_aggregates(&a, &b).unwrap();
            prop_assert_eq!(&ab, &merge_aggregates(&b, &a).unwrap());
            prop_assert_eq!(
                merge_aggregates(&ab, &c).unwrap(),
                merge_aggregates(&a, &merge_aggregates(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(&merge_aggregates(&a, &a).unwrap(), &a);
            prop_assert!(ab.len() <= a.len() + b.len());
            // Independent oracle: plain set union.
            let union: BTreeSet<_> = a.signers.iter().chain(&b.signers).copied().collect();
            prop_assert_eq!(&ab.signers, &union);
        }

        #[test]
        fn aggregate_never_verifies_other_content(s in proptest::collection::btree_set(0u32..64, 1..10), x in any::<Vec<u8>>(), y in any::<Vec<u8>>()) {
            prop_assume!(x != y);
            let a = agg(&s.iter().copied().collect::<Vec<_>>(), &x);
            prop_assert!(Keyring::new(64).verify_aggregate(&a, &x));
            prop_assert!(!Keyring::new(64).verify_aggregate(&a, &y));
        }
    }
}
