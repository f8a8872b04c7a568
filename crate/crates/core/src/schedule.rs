//! Deterministic leader and proposer selection.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::{PartyId, Round};

/// Maps rounds to ordered leader lists.
///
/// With seed 0 the schedule is round robin: `leader_of(r) = r mod n` and the
/// list for round `r` continues with `r+1, r+2, ...` modulo `n`. Any other
/// seed draws a fresh permutation of the committee for every window of `n`
/// consecutive rounds and reads the list from it the same way.
#[derive(Clone, Debug)]
pub struct LeaderSchedule {
    n: usize,
    seed: u64,
    k: usize,
    windows: Arc<Mutex<HashMap<u64, Arc<[u32]>>>>,
}

impl LeaderSchedule {
    pub fn new(n: usize, seed: u64, leaders_per_round: usize) -> Self {
        assert!(n > 0, "empty committee");
        assert!(
            (1..=n).contains(&leaders_per_round),
            "leaders_per_round must be in 1..=n"
        );
        Self {
            n,
            seed,
            k: leaders_per_round,
            windows: Arc::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn leaders_per_round(&self) -> usize {
        self.k
    }

    /// Main leader of round `r`.
    pub fn leader_of(&self, r: Round) -> PartyId {
        self.nth(r, 0)
    }

    /// Ordered leader list of round `r`; element 0 is [`Self::leader_of`].
    pub fn leaders_of(&self, r: Round) -> Vec<PartyId> {
        (0..self.k).map(|i| self.nth(r, i)).collect()
    }

    pub fn is_leader(&self, r: Round, p: PartyId) -> bool {
        (0..self.k).any(|i| self.nth(r, i) == p)
    }

    /// Position of `p` in the leader list of round `r`.
    pub fn leader_index(&self, r: Round, p: PartyId) -> Option<usize> {
        (0..self.k).find(|&i| self.nth(r, i) == p)
    }

    fn nth(&self, r: Round, i: usize) -> PartyId {
        let n = self.n as u64;
        let slot = r + i as u64;
        if self.seed == 0 {
            return PartyId((slot % n) as u32);
        }
        // The list is read from the window that holds `r`, wrapping inside it,
        // so the k entries stay distinct.
        let window = r / n;
        let idx = (r % n + i as u64) % n;
        let perm = self.window(window);
        PartyId(perm[idx as usize])
    }

    fn window(&self, w: u64) -> Arc<[u32]> {
        let mut cache = self.windows.lock().expect("schedule cache poisoned");
        cache
            .entry(w)
            .or_insert_with(|| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(self.seed ^ w.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut perm: Vec<u32> = (0..self.n as u32).collect();
                perm.shuffle(&mut rng);
                perm.into()
            })
            .clone()
    }
}

/// Decides which parties create a vertex (rather than a vote) in each round.
///
/// Exactly `max(round(rate * n), k)` parties propose per round. The round's
/// leaders are always among them; the rest are a seeded random choice.
#[derive(Clone, Debug)]
pub struct ProposerPolicy {
    rate: f64,
    seed: u64,
}

impl ProposerPolicy {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, seed }
    }

    pub fn proposers(&self, schedule: &LeaderSchedule, r: Round) -> Vec<PartyId> {
        let n = schedule.n();
        let leaders = schedule.leaders_of(r);
        let target = ((self.rate * n as f64).round() as usize).clamp(leaders.len(), n);
        if target == n {
            return (0..n).map(PartyId::from).collect();
        }
        let mut others: Vec<PartyId> = (0..n)
            .map(PartyId::from)
            .filter(|p| !leaders.contains(p))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ 0x5eed_0000_0000_0000 ^ r.wrapping_mul(0xbf58_476d_1ce4_e5b9),
        );
        others.shuffle(&mut rng);
        let mut chosen = leaders;
        chosen.extend(others.into_iter().take(target - chosen.len()));
        chosen.sort();
        chosen
    }

    pub fn intends(&self, schedule: &LeaderSchedule, p: PartyId, r: Round) -> bool {
        if self.rate >= 1.0 || schedule.is_leader(r, p) {
            return true;
        }
        self.proposers(schedule, r).contains(&p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn round_robin_with_zero_seed() {
        let s = LeaderSchedule::new(4, 0, 1);
        assert_eq!(s.leader_of(1), PartyId(1));
        assert_eq!(s.leader_of(5), PartyId(1));
        assert_eq!(s.leader_of(4), PartyId(0));
    }

    #[test]
    fn seeded_schedule_is_deterministic() {
        let a = LeaderSchedule::new(4, 42, 1);
        let b = LeaderSchedule::new(4, 42, 1);
        assert_eq!(a.leader_of(7), a.leader_of(7));
        assert_eq!(a.leader_of(7), b.leader_of(7));
    }

    #[test]
    fn single_leader_list_is_the_leader() {
        let s = LeaderSchedule::new(4, 9, 1);
        assert_eq!(s.leaders_of(3), vec![s.leader_of(3)]);
    }

    #[test]
    fn leader_lists_are_distinct_and_start_with_main() {
        for seed in [0, 1, 42] {
            let s = LeaderSchedule::new(4, seed, 3);
            for r in 1..40 {
                let l = s.leaders_of(r);
                assert_eq!(l.len(), 3);
                assert_eq!(l[0], s.leader_of(r));
                assert_eq!(l.iter().collect::<BTreeSet<_>>().len(), 3);
                assert_eq!(l, s.leaders_of(r));
            }
        }
    }

    #[test]
    fn seeded_windows_cover_every_party() {
        let s = LeaderSchedule::new(7, 5, 1);
        for w in 0..5u64 {
            let seen: BTreeSet<_> = (w * 7..w * 7 + 7).map(|r| s.leader_of(r)).collect();
            assert_eq!(seen.len(), 7);
        }
    }

    #[test]
    fn proposer_count_is_exact_and_includes_leaders() {
        let s = LeaderSchedule::new(50, 3, 10);
        let p = ProposerPolicy::new(0.4, 11);
        for r in 1..30 {
            let chosen = p.proposers(&s, r);
            assert_eq!(chosen.len(), 20);
            for l in s.leaders_of(r) {
                assert!(chosen.contains(&l));
                assert!(p.intends(&s, l, r));
            }
        }
        let all = ProposerPolicy::new(1.0, 0).proposers(&s, 4);
        assert_eq!(all.len(), 50);
    }
}
