//! Replay buffer and per-stage trajectory buffers.
//!
//! Stage buffer `B_j` holds whole trajectories whose stage index is exactly
//! `j`. Discriminator batches are drawn per transition: a sample from the
//! union `B_a ∪ .. ∪ B_b` is uniform over all transitions stored there, so
//! longer trajectories are drawn proportionally more often.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::env::{Trajectory, Transition};

pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;
pub const DEFAULT_STAGE_CAPACITY: usize = 2000;

/// FIFO store of transitions for off-policy updates.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    data: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            data: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// `n` transitions drawn uniformly with replacement; `None` when empty.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if self.data.is_empty() {
            return None;
        }
        Some((0..n).map(|_| &self.data[rng.random_range(0..self.data.len())]).collect())
    }
}

/// Identifier assigned to each trajectory when it is routed.
pub type TrajectoryId = u64;

#[derive(Clone, Debug)]
struct Stored {
    id: TrajectoryId,
    traj: Arc<Trajectory>,
}

#[derive(Clone, Debug, Default)]
struct StageStore {
    /// Never evicted (demonstrations).
    pinned: Vec<Stored>,
    fifo: VecDeque<Stored>,
    /// Exclusive prefix sums of trajectory lengths over `pinned` then `fifo`.
    cumulative: Vec<usize>,
    transitions: usize,
}

impl StageStore {
    fn iter(&self) -> impl Iterator<Item = &Stored> {
        self.pinned.iter().chain(self.fifo.iter())
    }

    fn nth(&self, i: usize) -> &Stored {
        if i < self.pinned.len() {
            &self.pinned[i]
        } else {
            &self.fifo[i - self.pinned.len()]
        }
    }

    fn reindex(&mut self) {
        self.cumulative.clear();
        let mut total = 0;
        for s in self.pinned.iter().chain(self.fifo.iter()) {
            self.cumulative.push(total);
            total += s.traj.len();
        }
        self.transitions = total;
    }

    /// Transition at flat position `k < self.transitions`.
    fn locate(&self, k: usize) -> (TrajectoryId, &Transition) {
        let i = self.cumulative.partition_point(|&c| c <= k) - 1;
        let s = self.nth(i);
        (s.id, &s.traj.transitions()[k - self.cumulative[i]])
    }
}

/// One sampled transition and the trajectory it came from.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub trajectory: TrajectoryId,
    pub stage: usize,
    pub transition: &'a Transition,
}

/// Both sides of a discriminator batch for stage `k`.
#[derive(Clone, Debug)]
pub struct DiscriminatorBatch<'a> {
    /// From trajectories that got beyond stage `k`.
    pub positives: Vec<Sample<'a>>,
    /// From trajectories that reached at most stage `k`.
    pub negatives: Vec<Sample<'a>>,
}

/// Stage buffers `B_0..=B_N`.
#[derive(Clone, Debug)]
pub struct StageBuffers {
    stores: Vec<StageStore>,
    capacity: usize,
    next_id: TrajectoryId,
}

impl StageBuffers {
    pub fn new(num_stages: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "stage buffer capacity must be positive");
        Self {
            stores: vec![StageStore::default(); num_stages + 1],
            capacity,
            next_id: 0,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stores.len() - 1
    }

    fn insert(&mut self, traj: Trajectory, pinned: bool) -> TrajectoryId {
        let k = traj.stage_index();
        assert!(k <= self.num_stages(), "stage index {k} exceeds {} stages", self.num_stages());
        let id = self.next_id;
        self.next_id += 1;
        let store = &mut self.stores[k];
        let stored = Stored {
            id,
            traj: Arc::new(traj),
        };
        if pinned {
            store.pinned.push(stored);
        } else {
            if store.fifo.len() == self.capacity {
                store.fifo.pop_front();
            }
            store.fifo.push_back(stored);
        }
        store.reindex();
        id
    }

    /// Append to `B_{stage_index}`, evicting that buffer's oldest
    /// non-pinned trajectory when full.
    pub fn route(&mut self, traj: Trajectory) -> TrajectoryId {
        self.insert(traj, false)
    }

    /// Store demonstrations in `B_N`; they are never evicted.
    pub fn seed_demos(&mut self, demos: impl IntoIterator<Item = Trajectory>) {
        for d in demos {
            assert_eq!(
                d.stage_index(),
                self.num_stages(),
                "demonstrations must be success trajectories"
            );
            self.insert(d, true);
        }
    }

    /// Trajectory count per buffer.
    pub fn sizes(&self) -> Vec<usize> {
        self.stores.iter().map(|s| s.pinned.len() + s.fifo.len()).collect()
    }

    pub fn transition_counts(&self) -> Vec<usize> {
        self.stores.iter().map(|s| s.transitions).collect()
    }

    /// `(id, trajectory)` pairs held in `B_k`.
    pub fn trajectories(&self, k: usize) -> impl Iterator<Item = (TrajectoryId, &Trajectory)> {
        self.stores[k].iter().map(|s| (s.id, s.traj.as_ref()))
    }

    /// `n` samples uniform over the transitions of `B_lo..=B_hi`.
    fn sample_range<'a, R: Rng + ?Sized>(
        &'a self,
        lo: usize,
        hi: usize,
        n: usize,
        rng: &mut R,
    ) -> Option<Vec<Sample<'a>>> {
        let total: usize = self.stores[lo..=hi].iter().map(|s| s.transitions).sum();
        if total == 0 {
            return None;
        }
        let out = (0..n)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let mut stage = lo;
                while k >= self.stores[stage].transitions {
                    k -= self.stores[stage].transitions;
                    stage += 1;
                }
                let (trajectory, transition) = self.stores[stage].locate(k);
                Sample {
                    trajectory,
                    stage,
                    transition,
                }
            })
            .collect();
        Some(out)
    }

    /// Positives from `B_{k+1}..=B_N`, negatives from `B_0..=B_k`, `n` each.
    /// `None` when either side is empty.
    pub fn sample_discriminator_batch<'a, R: Rng + ?Sized>(
        &'a self,
        k: usize,
        n: usize,
        rng: &mut R,
    ) -> Option<DiscriminatorBatch<'a>> {
        assert!(k < self.num_stages(), "discriminator stage {k} out of range");
        let positives = self.sample_range(k + 1, self.num_stages(), n, rng)?;
        let negatives = self.sample_range(0, k, n, rng)?;
        Some(DiscriminatorBatch { positives, negatives })
    }

    /// Transitions of `B_lo..=B_hi` uniformly; used for GAIL-style splits.
    pub fn sample_stages<'a, R: Rng + ?Sized>(
        &'a self,
        lo: usize,
        hi: usize,
        n: usize,
        rng: &mut R,
    ) -> Option<Vec<Sample<'a>>> {
        assert!(lo <= hi && hi <= self.num_stages());
        self.sample_range(lo, hi, n, rng)
    }

    /// Demonstrations currently held (pinned entries of `B_N`).
    pub fn demos(&self) -> impl Iterator<Item = &Trajectory> {
        self.stores[self.num_stages()].pinned.iter().map(|s| s.traj.as_ref())
    }
}
