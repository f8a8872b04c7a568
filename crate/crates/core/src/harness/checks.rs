//! Safety and liveness checkers applied to finished runs.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::schedule::LeaderSchedule;
use crate::sim::{RunTrace, StopReason};
use crate::types::{PartyId, Round, VertexId};

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafetyViolation {
    #[error("{a} and {b} diverge at index {index}: {left:?} vs {right:?}")]
    Divergence {
        a: PartyId,
        b: PartyId,
        index: usize,
        left: String,
        right: String,
    },
    #[error(
        "{party} delivered a vertex of round {round} from {source_party} twice (index {index})"
    )]
    Duplicate {
        party: PartyId,
        index: usize,
        round: Round,
        source_party: PartyId,
    },
    #[error("{party} delivered {vertex}, which its honest creator never built")]
    Fabricated { party: PartyId, vertex: String },
    #[error("leader vertex of round {round} committed directly by {party} although a timeout certificate exists")]
    TcExclusion { party: PartyId, round: Round },
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LivenessIssue {
    #[error("run ended without reaching its stop condition ({0:?})")]
    Stopped(StopReason),
    #[error("{party} never delivered {vertex}, created before GST by a correct party")]
    Undelivered { party: PartyId, vertex: String },
}

/// Prefix consistency of every pair of streams plus at-most-once delivery per
/// (round, source) within each stream. Reports the first problem found.
pub fn check_total_order(streams: &[(PartyId, Vec<VertexId>)]) -> Result<(), SafetyViolation> {
    for (p, s) in streams {
        let mut seen = BTreeSet::new();
        for (index, v) in s.iter().enumerate() {
            if !seen.insert((v.round, v.source)) {
                return Err(SafetyViolation::Duplicate {
                    party: *p,
                    index,
                    round: v.round,
                    source_party: v.source,
                });
            }
        }
    }
    for (i, (a, sa)) in streams.iter().enumerate() {
        for (b, sb) in &streams[i + 1..] {
            if let Some(index) = sa.iter().zip(sb).position(|(x, y)| x != y) {
                return Err(SafetyViolation::Divergence {
                    a: *a,
                    b: *b,
                    index,
                    left: format!("{:?}", sa[index]),
                    right: format!("{:?}", sb[index]),
                });
            }
        }
    }
    Ok(())
}

/// Every vertex an honest party delivered from an honest source is the one
/// that source created.
pub fn check_integrity(trace: &RunTrace) -> Result<(), SafetyViolation> {
    for p in trace.honest() {
        for d in &trace.deliveries[p.index()] {
            if trace.is_honest(d.vertex.source) && !trace.created.contains_key(&d.vertex) {
                return Err(SafetyViolation::Fabricated {
                    party: p,
                    vertex: format!("{:?}", d.vertex),
                });
            }
        }
    }
    Ok(())
}

/// No honest party commits the main leader vertex of round `r` directly when
/// a valid timeout certificate for `r` exists.
pub fn check_tc_exclusion(
    trace: &RunTrace,
    schedule: &LeaderSchedule,
) -> Result<(), SafetyViolation> {
    for p in trace.honest() {
        for c in &trace.commits[p.index()] {
            let r = c.leader.round;
            if c.direct && c.leader.source == schedule.leader_of(r) && trace.tc_rounds.contains(&r)
            {
                return Err(SafetyViolation::TcExclusion { party: p, round: r });
            }
        }
    }
    Ok(())
}

/// All safety checks over the honest output streams of a run.
pub fn check_safety(trace: &RunTrace, schedule: &LeaderSchedule) -> Result<(), SafetyViolation> {
    let streams: Vec<_> = trace.honest().map(|p| (p, trace.delivered(p))).collect();
    check_total_order(&streams)?;
    check_integrity(trace)?;
    check_tc_exclusion(trace, schedule)
}

/// The run reached its stop condition, and every vertex a correct party
/// created before GST was delivered by every correct party.
pub fn check_liveness(trace: &RunTrace) -> Result<(), LivenessIssue> {
    if trace.stop != StopReason::Reached {
        return Err(LivenessIssue::Stopped(trace.stop));
    }
    let early: Vec<&VertexId> = trace
        .created
        .iter()
        .filter(|(id, c)| trace.is_correct(id.source) && c.time < trace.gst)
        .map(|(id, _)| id)
        .collect();
    for p in trace.correct() {
        let got: BTreeSet<VertexId> = trace.delivered(p).into_iter().collect();
        if let Some(v) = early.iter().find(|v| !got.contains(v)) {
            return Err(LivenessIssue::Undelivered {
                party: p,
                vertex: format!("{v:?}"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Digest;
    use proptest::prelude::*;

    fn vid(round: Round, source: u32) -> VertexId {
        VertexId {
            round,
            source: PartyId(source),
            digest: Digest::of(&[round as u8, source as u8]),
        }
    }

    fn stream(ids: &[(Round, u32)]) -> Vec<VertexId> {
        ids.iter().map(|&(r, s)| vid(r, s)).collect()
    }

    #[test]
    fn identical_streams_pass() {
        let s = stream(&[(1, 0), (1, 1), (2, 0)]);
        assert!(check_total_order(&[(PartyId(0), s.clone()), (PartyId(1), s)]).is_ok());
    }

    #[test]
    fn strict_prefix_passes() {
        let s = stream(&[(1, 0), (1, 1), (2, 0)]);
        assert!(check_total_order(&[(PartyId(0), s[..1].to_vec()), (PartyId(1), s)]).is_ok());
    }

    #[test]
    fn swapped_adjacent_deliveries_fail_at_the_swap() {
        let a = stream(&[(1, 0), (1, 1), (1, 2), (2, 0)]);
        let mut b = a.clone();
        b.swap(1, 2);
        match check_total_order(&[(PartyId(0), a), (PartyId(1), b)]) {
            Err(SafetyViolation::Divergence { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_slot_fails() {
        let mut s = stream(&[(1, 0), (1, 1)]);
        s.push(VertexId {
            digest: Digest::of(b"other"),
            ..vid(1, 0)
        });
        assert!(matches!(
            check_total_order(&[(PartyId(0), s)]),
            Err(SafetyViolation::Duplicate { index: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn prefixes_of_one_order_always_pass(len in 0usize..30, cuts in proptest::collection::vec(0usize..30, 1..5)) {
            let full: Vec<VertexId> = (0..len).map(|i| vid(i as Round / 4, (i % 4) as u32)).collect();
            let streams: Vec<_> = cuts.iter().enumerate()
                .map(|(i, c)| (PartyId::from(i), full[..(*c).min(len)].to_vec()))
                .collect();
            prop_assert!(check_total_order(&streams).is_ok());
        }

        #[test]
        fn any_swap_of_distinct_entries_is_caught(len in 2usize..20, i in 0usize..19) {
            let a: Vec<VertexId> = (0..len).map(|k| vid(k as Round, 0)).collect();
            let i = i % (len - 1);
            let mut b = a.clone();
            b.swap(i, i + 1);
            let verdict = check_total_order(&[(PartyId(0), a), (PartyId(1), b)]);
            prop_assert!(
                matches!(verdict, Err(SafetyViolation::Divergence { index, .. }) if index == i),
                "expected a divergence at {}", i
            );
        }
    }
}
