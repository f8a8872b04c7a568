//! Latency histograms, traffic totals and verdicts of one run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::MessageKind;
use crate::dag::DagStore;
use crate::schedule::LeaderSchedule;
use crate::sim::{RunTrace, StopReason, Traffic};
use crate::types::{PartyId, Round, VertexId};

/// Counts per integer value, in delay units.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Histogram(BTreeMap<u64, u64>);

impl Histogram {
    pub fn record(&mut self, value: u64) {
        *self.0.entry(value).or_default() += 1;
    }

    pub fn count(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> Option<u64> {
        self.0.keys().next().copied()
    }

    pub fn max(&self) -> Option<u64> {
        self.0.keys().next_back().copied()
    }

    /// Most frequent value; the smallest one on ties.
    pub fn mode(&self) -> Option<u64> {
        let best = self.0.values().max()?;
        self.0.iter().find(|(_, c)| *c == best).map(|(v, _)| *v)
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.count();
        (n > 0).then(|| self.0.iter().map(|(v, c)| (v * c) as f64).sum::<f64>() / n as f64)
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (v, c) in &other.0 {
            *self.0.entry(*v).or_default() += c;
        }
    }

    pub fn buckets(&self) -> &BTreeMap<u64, u64> {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub seed: u64,
    /// Leader vertex creation to its first commit by an honest party.
    pub lv_commit_latency: Histogram,
    /// Non-leader vertex creation to its first honest delivery, for vertices
    /// the next main leader vertex references by a strong edge.
    pub nlv_commit_latency: Histogram,
    /// The same measure for non-leader vertices reached only by weak edges
    /// or longer paths.
    pub nlv_other_latency: Histogram,
    /// Transaction creation to its first honest delivery.
    pub tx_commit_latency: Histogram,
    pub rounds_reached: BTreeMap<PartyId, Round>,
    pub committed_round: BTreeMap<PartyId, Round>,
    pub delivered: BTreeMap<PartyId, usize>,
    pub traffic: BTreeMap<Round, BTreeMap<MessageKind, Traffic>>,
    pub total_traffic: Traffic,
    pub tc_rounds: Vec<Round>,
    pub rejections: u64,
    pub end_time: u64,
    pub stop: StopReason,
    pub safety: Option<String>,
    pub liveness: Option<String>,
}

impl Metrics {
    /// Computes latencies from `trace`. `reference` is the DAG of a correct
    /// party, used to classify non-leader vertices by how they got committed.
    pub fn compute(
        seed: u64,
        trace: &RunTrace,
        schedule: &LeaderSchedule,
        reference: Option<&DagStore>,
    ) -> Self {
        let first_commit = first_honest(trace, |p| {
            trace.commits[p.index()].iter().map(|c| (c.leader, c.time))
        });
        let first_delivery = first_honest(trace, |p| {
            trace.deliveries[p.index()]
                .iter()
                .map(|d| (d.vertex, d.time))
        });

        let mut lv = Histogram::default();
        let mut nlv = Histogram::default();
        let mut other = Histogram::default();
        for (id, c) in trace
            .created
            .iter()
            .filter(|(id, _)| trace.is_honest(id.source))
        {
            if schedule.is_leader(id.round, id.source) {
                if let Some(t) = first_commit.get(id) {
                    lv.record(t - c.time);
                }
            } else if let Some(t) = first_delivery.get(id) {
                let strong = reference
                    .and_then(|d| d.get_leader_vertex(id.round + 1))
                    .is_some_and(|l| l.strong_edges().contains(id));
                if strong { &mut nlv } else { &mut other }.record(t - c.time);
            }
        }

        let mut tx = Histogram::default();
        let mut seen = std::collections::BTreeSet::new();
        for p in trace.honest() {
            for d in &trace.deliveries[p.index()] {
                if let Some(t) = first_delivery.get(&d.vertex) {
                    for x in &d.txs {
                        if seen.insert(x.id) {
                            tx.record(t.saturating_sub(x.created_at));
                        }
                    }
                }
            }
        }

        let mut traffic: BTreeMap<Round, BTreeMap<MessageKind, Traffic>> = BTreeMap::new();
        for ((r, k), t) in &trace.traffic {
            traffic.entry(*r).or_default().insert(*k, *t);
        }
        Self {
            seed,
            lv_commit_latency: lv,
            nlv_commit_latency: nlv,
            nlv_other_latency: other,
            tx_commit_latency: tx,
            rounds_reached: trace.parties().map(|p| (p, trace.final_round(p))).collect(),
            committed_round: trace
                .parties()
                .map(|p| {
                    (
                        p,
                        trace.commits[p.index()]
                            .iter()
                            .map(|c| c.leader.round)
                            .max()
                            .unwrap_or(0),
                    )
                })
                .collect(),
            delivered: trace
                .parties()
                .map(|p| (p, trace.deliveries[p.index()].len()))
                .collect(),
            traffic,
            total_traffic: trace.total_traffic(),
            tc_rounds: trace.tc_rounds.iter().copied().collect(),
            rejections: trace.rejections,
            end_time: trace.end_time,
            stop: trace.stop,
            safety: None,
            liveness: None,
        }
    }

    /// Mean bytes per round over `rounds`, counting every message kind.
    pub fn mean_round_bytes(&self, rounds: std::ops::RangeInclusive<Round>) -> f64 {
        let per: Vec<u64> = rounds
            .clone()
            .map(|r| {
                self.traffic
                    .get(&r)
                    .map_or(0, |m| m.values().map(|t| t.bytes).sum())
            })
            .collect();
        per.iter().sum::<u64>() as f64 / per.len().max(1) as f64
    }
}

/// Earliest time any honest party reported each id.
fn first_honest<'a, I>(trace: &'a RunTrace, items: impl Fn(PartyId) -> I) -> BTreeMap<VertexId, u64>
where
    I: Iterator<Item = (VertexId, u64)> + 'a,
{
    let mut out: BTreeMap<VertexId, u64> = BTreeMap::new();
    for p in trace.honest() {
        for (id, t) in items(p) {
            out.entry(id).and_modify(|x| *x = (*x).min(t)).or_insert(t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_statistics() {
        let mut h = Histogram::default();
        for v in [3, 3, 5, 3, 5, 9] {
            h.record(v);
        }
        assert_eq!(h.count(), 6);
        assert_eq!(h.mode(), Some(3));
        assert_eq!((h.min(), h.max()), (Some(3), Some(9)));
        assert_eq!(h.mean(), Some(28.0 / 6.0));
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"3":3,"5":2,"9":1}"#);
    }

    #[test]
    fn empty_histogram_has_no_mode() {
        assert_eq!(Histogram::default().mode(), None);
        assert_eq!(Histogram::default().mean(), None);
    }
}
