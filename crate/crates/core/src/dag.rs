//! One party's local DAG with causal-completeness gating.
//!
//! A vertex enters the store only once every edge target is already stored;
//! until then it waits in a buffer indexed by its missing ancestors, and a
//! successful insertion promotes newly unblocked vertices round by round.
//! Stored vertices are immutable and so is the set of vertices reachable from
//! each of them, which lets linearization stop at already-delivered vertices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rustc_hash::FxHashMap;

use crate::schedule::LeaderSchedule;
use crate::types::{PartyId, Round, Vertex, VertexId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    /// The vertex and every buffered vertex it unblocked, in insertion order.
    Inserted(Vec<VertexId>),
    Buffered,
    Duplicate,
    /// Another vertex already holds this (round, source) slot.
    Conflict,
}

#[derive(Clone, Debug)]
pub struct DagStore {
    schedule: LeaderSchedule,
    vertices: Vec<Vertex>,
    index: FxHashMap<VertexId, usize>,
    /// All outgoing edges as dense indices.
    edges: Vec<Vec<usize>>,
    /// Strong and leader edges only.
    leader_graph: Vec<Vec<usize>>,
    rounds: BTreeMap<Round, BTreeMap<PartyId, usize>>,
    delivered: Vec<bool>,
    buffer: FxHashMap<VertexId, (Vertex, usize)>,
    buffered_slots: FxHashMap<(Round, PartyId), VertexId>,
    waiting_on: FxHashMap<VertexId, Vec<VertexId>>,
    conflicts: Vec<(Round, PartyId)>,
}

impl DagStore {
    pub fn new(schedule: LeaderSchedule) -> Self {
        Self {
            schedule,
            vertices: Vec::new(),
            index: FxHashMap::default(),
            edges: Vec::new(),
            leader_graph: Vec::new(),
            rounds: BTreeMap::new(),
            delivered: Vec::new(),
            buffer: FxHashMap::default(),
            buffered_slots: FxHashMap::default(),
            waiting_on: FxHashMap::default(),
            conflicts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_buffered(&self, id: &VertexId) -> bool {
        self.buffer.contains_key(id)
    }

    pub fn conflicts(&self) -> &[(Round, PartyId)] {
        &self.conflicts
    }

    pub fn contains(&self, id: &VertexId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &VertexId) -> Option<&Vertex> {
        self.index.get(id).map(|&i| &self.vertices[i])
    }

    pub fn get_vertex(&self, p: PartyId, r: Round) -> Option<&Vertex> {
        self.rounds.get(&r)?.get(&p).map(|&i| &self.vertices[i])
    }

    pub fn get_leader_vertex(&self, r: Round) -> Option<&Vertex> {
        self.get_vertex(self.schedule.leader_of(r), r)
    }

    pub fn round_len(&self, r: Round) -> usize {
        self.rounds.get(&r).map_or(0, BTreeMap::len)
    }

    pub fn round_sources(&self, r: Round) -> impl Iterator<Item = PartyId> + '_ {
        self.rounds
            .get(&r)
            .into_iter()
            .flat_map(|m| m.keys().copied())
    }

    pub fn round_vertices(&self, r: Round) -> impl Iterator<Item = &Vertex> + '_ {
        self.rounds
            .get(&r)
            .into_iter()
            .flat_map(move |m| m.values().map(move |&i| &self.vertices[i]))
    }

    pub fn max_round(&self) -> Round {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter()
    }

    pub fn is_delivered(&self, id: &VertexId) -> bool {
        self.index.get(id).is_some_and(|&i| self.delivered[i])
    }

    /// Inserts `v` if all its edge targets are stored, otherwise buffers it.
    pub fn try_add_to_dag(&mut self, v: Vertex) -> AddOutcome {
        let id = v.id();
        if self.index.contains_key(&id) || self.buffer.contains_key(&id) {
            return AddOutcome::Duplicate;
        }
        let slot = (v.round(), v.source());
        let taken = self
            .rounds
            .get(&slot.0)
            .is_some_and(|m| m.contains_key(&slot.1));
        if taken || self.buffered_slots.contains_key(&slot) {
            self.conflicts.push(slot);
            return AddOutcome::Conflict;
        }
        let missing: BTreeSet<VertexId> = v
            .edges()
            .filter(|e| !self.index.contains_key(e))
            .copied()
            .collect();
        if !missing.is_empty() {
            for m in &missing {
                self.waiting_on.entry(*m).or_default().push(id);
            }
            self.buffered_slots.insert(slot, id);
            self.buffer.insert(id, (v, missing.len()));
            return AddOutcome::Buffered;
        }
        let mut inserted = Vec::new();
        let mut ready = BTreeSet::new();
        self.insert(v, &mut ready);
        inserted.push(id);
        // Breadth-first by round until no buffered vertex becomes complete.
        while let Some(next) = ready.pop_first() {
            let (v, _) = self
                .buffer
                .remove(&next)
                .expect("ready vertices are buffered");
            self.buffered_slots.remove(&(v.round(), v.source()));
            self.insert(v, &mut ready);
            inserted.push(next);
        }
        AddOutcome::Inserted(inserted)
    }

    fn insert(&mut self, v: Vertex, ready: &mut BTreeSet<VertexId>) {
        let i = self.vertices.len();
        let id = v.id();
        let edges: Vec<usize> = v.edges().map(|e| self.index[e]).collect();
        let leader_graph: Vec<usize> = v
            .strong_edges()
            .iter()
            .chain(v.leader_edges())
            .map(|e| self.index[e])
            .collect();
        self.rounds
            .entry(v.round())
            .or_default()
            .insert(v.source(), i);
        self.index.insert(id, i);
        self.edges.push(edges);
        self.leader_graph.push(leader_graph);
        self.delivered.push(false);
        self.vertices.push(v);
        if let Some(waiters) = self.waiting_on.remove(&id) {
            for w in waiters {
                if let Some((_, missing)) = self.buffer.get_mut(&w) {
                    *missing -= 1;
                    if *missing == 0 {
                        ready.insert(w);
                    }
                }
            }
        }
    }

    /// True iff `u` is reachable from `v` over strong, weak and leader edges.
    pub fn path(&self, v: &VertexId, u: &VertexId) -> bool {
        let (Some(&from), Some(&to)) = (self.index.get(v), self.index.get(u)) else {
            return false;
        };
        let floor = u.round;
        self.search(from, to, |j| self.vertices[j].round() >= floor, &self.edges)
    }

    /// True iff a path from `v` to `u` exists that uses only strong and
    /// leader edges and whose intermediate vertices are main-leader vertices.
    pub fn leader_path(&self, v: &VertexId, u: &VertexId) -> bool {
        let (Some(&from), Some(&to)) = (self.index.get(v), self.index.get(u)) else {
            return false;
        };
        let floor = u.round;
        let pass = |j: usize| {
            let w = &self.vertices[j];
            j == to || (w.round() > floor && self.schedule.leader_of(w.round()) == w.source())
        };
        self.search(from, to, pass, &self.leader_graph)
    }

    fn search(
        &self,
        from: usize,
        to: usize,
        pass: impl Fn(usize) -> bool,
        graph: &[Vec<usize>],
    ) -> bool {
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(i) = stack.pop() {
            if i == to {
                return true;
            }
            for &j in &graph[i] {
                if !seen[j] && pass(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    }

    /// Fills `weak_edges` of a vertex under construction at `round` with every
    /// stored vertex of rounds `<= round - 2` that its other edges (and the
    /// weak edges chosen so far) do not reach, scanning rounds downward.
    pub fn set_weak_edges(
        &self,
        strong: &BTreeSet<VertexId>,
        leader: &BTreeSet<VertexId>,
        round: Round,
    ) -> BTreeSet<VertexId> {
        let mut weak = BTreeSet::new();
        if round < 3 {
            return weak;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut stack: Vec<usize> = strong
            .iter()
            .chain(leader)
            .filter_map(|e| self.index.get(e).copied())
            .collect();
        let mark = |stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
            while let Some(i) = stack.pop() {
                if std::mem::replace(&mut seen[i], true) {
                    continue;
                }
                stack.extend(self.edges[i].iter().copied().filter(|&j| !seen[j]));
            }
        };
        mark(&mut stack, &mut seen);
        for r in (1..=round - 2).rev() {
            let Some(slots) = self.rounds.get(&r) else {
                continue;
            };
            for &i in slots.values() {
                if !seen[i] {
                    weak.insert(self.vertices[i].id());
                    stack.push(i);
                    mark(&mut stack, &mut seen);
                }
            }
        }
        weak
    }

    /// Marks and returns the not-yet-delivered causal history of `leader`,
    /// sorted by (round, source, digest).
    pub fn deliver_history(&mut self, leader: &VertexId) -> Vec<VertexId> {
        let Some(&start) = self.index.get(leader) else {
            return Vec::new();
        };
        if self.delivered[start] {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut stack = vec![start];
        self.delivered[start] = true;
        while let Some(i) = stack.pop() {
            out.push(self.vertices[i].id());
            for &j in &self.edges[i] {
                // A delivered vertex's whole history is already delivered.
                if !self.delivered[j] {
                    self.delivered[j] = true;
                    stack.push(j);
                }
            }
        }
        out.sort();
        out
    }

    /// Checks that every stored vertex has all its edge targets stored.
    pub fn is_causally_complete(&self) -> bool {
        self.vertices
            .iter()
            .all(|v| v.edges().all(|e| self.index.contains_key(e)))
    }

    /// Stored vertices as a round -> (source -> id) map, for comparing stores.
    pub fn snapshot(&self) -> BTreeMap<Round, BTreeMap<PartyId, VertexId>> {
        self.rounds
            .iter()
            .map(|(r, m)| {
                (
                    *r,
                    m.iter()
                        .map(|(p, &i)| (*p, self.vertices[i].id()))
                        .collect(),
                )
            })
            .collect()
    }

    /// Graphviz rendering: one cluster per round, strong edges solid, weak
    /// edges dashed, leader edges bold.
    pub fn to_dot(&self, rounds: RangeInclusive<Round>) -> String {
        let name = |id: &VertexId| format!("v{}_{}", id.round, id.source.0);
        let mut s = String::from(
            "digraph dag {\n  rankdir=RL;\n  node [shape=box, fontname=\"monospace\"];\n",
        );
        for (r, slots) in self.rounds.range(rounds.clone()) {
            let _ = writeln!(s, "  subgraph cluster_r{r} {{\n    label=\"round {r}\";");
            for &i in slots.values() {
                let v = &self.vertices[i];
                let id = v.id();
                let leader = self.schedule.leader_of(*r) == v.source();
                let _ = writeln!(
                    s,
                    "    {} [label=\"{} r{}\\n{}\"{}];",
                    name(&id),
                    v.source(),
                    r,
                    id.digest.short(),
                    if leader { ", penwidth=2" } else { "" }
                );
            }
            s.push_str("  }\n");
        }
        for (_, slots) in self.rounds.range(rounds.clone()) {
            for &i in slots.values() {
                let v = &self.vertices[i];
                let from = name(&v.id());
                let styled = [
                    ("solid", v.strong_edges()),
                    ("dashed", v.weak_edges()),
                    ("bold", v.leader_edges()),
                ];
                for (style, set) in styled {
                    for e in set.iter().filter(|e| rounds.contains(&e.round)) {
                        let _ = writeln!(s, "  {from} -> {} [style={style}];", name(e));
                    }
                }
            }
        }
        s.push_str("}\n");
        s
    }
}
