//! Greedy optimality of a success/failure reward in a deterministic grid.
//!
//! Success trajectories come from a shortest-path policy that picks
//! uniformly among optimal actions; failure trajectories are random walks
//! that never reach the goal. A per-`(s, a)` logit table trained to separate
//! the two gives `R(s, a) = tanh(logit)`. Every optimal action then shows up
//! among the positives while non-optimal ones only appear as negatives, so
//! following `argmax_a R(s, a)` should retrace shortest paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{distances_to, optimal_actions, Action, GridMap, Pos, NUM_ACTIONS};
use crate::nn::{sigmoid, Adam};

/// Largest logit magnitude, so rewards stay strictly inside (-1, 1).
pub const TABLE_LOGIT_BOUND: f64 = 15.0;

/// A grid with deterministic moves and a single absorbing goal.
#[derive(Clone, Debug)]
pub struct TabularMDP {
    map: GridMap,
    goal: Pos,
    gamma: f64,
    dist: Vec<Option<usize>>,
    states: Vec<Pos>,
}

impl TabularMDP {
    pub fn new(map: GridMap, goal: Pos, gamma: f64) -> Result<Self> {
        if !map.is_free(goal) {
            return Err(Error::config(format!("goal {goal:?} is not a free cell")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !map.is_connected() {
            return Err(Error::config("every free cell must reach every other"));
        }
        let dist = distances_to(&map, goal);
        let states = map.free_cells();
        Ok(Self {
            map,
            goal,
            gamma,
            dist,
            states,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn states(&self) -> &[Pos] {
        &self.states
    }

    pub fn next(&self, s: Pos, a: Action) -> Pos {
        self.map.step_from(s, a)
    }

    /// Shortest-path length from `s` to the goal.
    pub fn distance(&self, s: Pos) -> usize {
        self.dist[self.map.index_of(s)].expect("free cells reach the goal")
    }

    pub fn optimal_actions(&self, s: Pos) -> Vec<Action> {
        optimal_actions(&self.map, &self.dist, s)
    }
}

/// A sequence of `(state, action)` pairs.
pub type TabTrajectory = Vec<(Pos, Action)>;

/// Emulated success (`positive`) and failure (`negative`) buffers.
#[derive(Clone, Debug, Default)]
pub struct TabularBuffers {
    pub positive: Vec<TabTrajectory>,
    pub negative: Vec<TabTrajectory>,
}

/// Buffers as a converged agent would leave them. Success trajectories
/// start uniformly among non-goal cells; failure trajectories are random
/// walks of up to `|S|` steps, cut before any step that would enter the
/// goal.
pub fn emulate_converged_buffers(mdp: &TabularMDP, n_success: usize, n_fail: usize, seed: u64) -> TabularBuffers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Pos> = mdp.states.iter().copied().filter(|&s| s != mdp.goal).collect();
    let mut out = TabularBuffers::default();
    if starts.is_empty() {
        return out;
    }
    for _ in 0..n_success {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut traj = Vec::with_capacity(mdp.distance(s));
        while s != mdp.goal {
            let opts = mdp.optimal_actions(s);
            let a = opts[rng.random_range(0..opts.len())];
            traj.push((s, a));
            s = mdp.next(s, a);
        }
        out.positive.push(traj);
    }
    let horizon = mdp.states.len();
    while out.negative.len() < n_fail {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut traj = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let a = Action::ALL[rng.random_range(0..NUM_ACTIONS)];
            let s2 = mdp.next(s, a);
            if s2 == mdp.goal {
                break;
            }
            traj.push((s, a));
            s = s2;
        }
        if !traj.is_empty() {
            out.negative.push(traj);
        }
    }
    out
}

/// `R(s, a) = tanh(logit(s, a))` over every cell of a map.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularReward {
    width: usize,
    logits: Vec<[f64; NUM_ACTIONS]>,
}

impl TabularReward {
    pub fn zeros(map: &GridMap) -> Self {
        Self {
            width: map.width(),
            logits: vec![[0.0; NUM_ACTIONS]; map.width() * map.height()],
        }
    }

    fn idx(&self, s: Pos) -> usize {
        s.y * self.width + s.x
    }

    pub fn logit(&self, s: Pos, a: Action) -> f64 {
        self.logits[self.idx(s)][a.index()]
    }

    pub fn set_logit(&mut self, s: Pos, a: Action, v: f64) {
        let i = self.idx(s);
        self.logits[i][a.index()] = v.clamp(-TABLE_LOGIT_BOUND, TABLE_LOGIT_BOUND);
    }

    pub fn value(&self, s: Pos, a: Action) -> f64 {
        self.logit(s, a).tanh()
    }

    /// Highest-reward action, ties to the lowest index.
    pub fn greedy(&self, s: Pos) -> Action {
        let row = &self.logits[self.idx(s)];
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if row[i] > row[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }
}

/// Full-batch Adam on class-balanced BCE: positives labelled 1, negatives 0.
/// Pairs never seen keep a zero logit.
pub fn train_tabular_discriminator(
    mdp: &TabularMDP,
    buffers: &TabularBuffers,
    steps: usize,
    lr: f64,
) -> Result<TabularReward> {
    let count = |side: &[TabTrajectory]| -> (Vec<f64>, usize) {
        let mut c = vec![0.0; mdp.map.width() * mdp.map.height() * NUM_ACTIONS];
        let mut total = 0;
        for (s, a) in side.iter().flatten() {
            c[mdp.map.index_of(*s) * NUM_ACTIONS + a.index()] += 1.0;
            total += 1;
        }
        (c, total)
    };
    let (pos, n_pos) = count(&buffers.positive);
    let (neg, n_neg) = count(&buffers.negative);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage("both buffers need at least one transition"));
    }
    let (w_pos, w_neg) = (1.0 / n_pos as f64, 1.0 / n_neg as f64);
    let mut params = vec![0.0; pos.len()];
    let mut adam = Adam::new(params.len(), lr);
    let mut grads = vec![0.0; params.len()];
    for _ in 0..steps {
        for i in 0..params.len() {
            let p = sigmoid(params[i]);
            grads[i] = neg[i] * w_neg * p - pos[i] * w_pos * (1.0 - p);
        }
        adam.update(&mut params, &grads)?;
        for p in &mut params {
            *p = p.clamp(-TABLE_LOGIT_BOUND, TABLE_LOGIT_BOUND);
        }
    }
    let mut reward = TabularReward::zeros(&mdp.map);
    for (row, chunk) in reward.logits.iter_mut().zip(params.chunks_exact(NUM_ACTIONS)) {
        row.copy_from_slice(chunk);
    }
    Ok(reward)
}

/// Why greedy optimality failed at some state.
#[derive(Clone, Debug, PartialEq)]
pub enum Counterexample {
    /// Some optimal action is not rewarded above every non-optimal one.
    Margin {
        state: Pos,
        min_optimal: f64,
        max_other: f64,
    },
    /// The greedy rollout did not reach the goal in the shortest time;
    /// `steps` is `None` when it never arrived within `|S|` steps.
    Rollout {
        start: Pos,
        steps: Option<usize>,
        shortest: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyReport {
    pub holds: bool,
    pub counterexamples: Vec<Counterexample>,
    pub states_checked: usize,
}

/// Check the action margin at every non-goal state and roll out the greedy
/// policy from every free cell.
pub fn verify_greedy_optimality(reward: &TabularReward, mdp: &TabularMDP) -> GreedyReport {
    let mut counterexamples = Vec::new();
    let cap = mdp.states.len();
    for &s in &mdp.states {
        if s == mdp.goal {
            continue;
        }
        let opt = mdp.optimal_actions(s);
        let min_optimal = opt.iter().map(|&a| reward.value(s, a)).fold(f64::INFINITY, f64::min);
        let max_other = Action::ALL
            .iter()
            .filter(|a| !opt.contains(a))
            .map(|&a| reward.value(s, a))
            .fold(f64::NEG_INFINITY, f64::max);
        if min_optimal <= max_other {
            counterexamples.push(Counterexample::Margin {
                state: s,
                min_optimal,
                max_other,
            });
        }

        let shortest = mdp.distance(s);
        let mut p = s;
        let mut steps = None;
        for t in 1..=cap {
            p = mdp.next(p, reward.greedy(p));
            if p == mdp.goal {
                steps = Some(t);
                break;
            }
        }
        if steps != Some(shortest) {
            counterexamples.push(Counterexample::Rollout {
                start: s,
                steps,
                shortest,
            });
        }
    }
    GreedyReport {
        holds: counterexamples.is_empty(),
        counterexamples,
        states_checked: mdp.states.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;
    use std::collections::HashSet;

    fn empty8() -> TabularMDP {
        TabularMDP::new(GridMap::empty(8, 8), Pos::new(7, 7), 0.95).unwrap()
    }

    #[test]
    fn positive_lengths_match_bfs() {
        let mdp = empty8();
        let b = emulate_converged_buffers(&mdp, 200, 50, 1);
        assert_eq!(b.positive.len(), 200);
        for t in &b.positive {
            assert_eq!(t.len(), mdp.distance(t[0].0));
            for (s, a) in t {
                assert!(mdp.optimal_actions(*s).contains(a));
            }
        }
    }

    #[test]
    fn negatives_never_touch_the_goal() {
        let mdp = empty8();
        let b = emulate_converged_buffers(&mdp, 1, 500, 2);
        for t in &b.negative {
            for (s, a) in t {
                assert_ne!(*s, mdp.goal());
                assert_ne!(mdp.next(*s, *a), mdp.goal());
            }
        }
    }

    #[test]
    fn positives_cover_every_optimal_pair() {
        let mdp = empty8();
        let b = emulate_converged_buffers(&mdp, 3000, 1, 3);
        let seen: HashSet<(Pos, Action)> = b.positive.iter().flatten().copied().collect();
        for &s in mdp.states() {
            for a in mdp.optimal_actions(s) {
                assert!(seen.contains(&(s, a)), "{s:?} {a:?}");
            }
        }
    }

    #[test]
    fn one_sided_pairs_saturate_and_unseen_stay_zero() {
        let mdp = empty8();
        let (a, b, c) = (Pos::new(0, 0), Pos::new(3, 3), Pos::new(5, 1));
        let buffers = TabularBuffers {
            positive: vec![vec![(a, Action::Up)]],
            negative: vec![vec![(b, Action::Left)]],
        };
        let r = train_tabular_discriminator(&mdp, &buffers, 500, 0.05).unwrap();
        assert!(r.value(a, Action::Up) >= 0.9);
        assert!(r.value(b, Action::Left) <= -0.9);
        assert_eq!(r.logit(c, Action::Down), 0.0);
        assert!(r.value(a, Action::Up) < 1.0);
        let empty = TabularBuffers {
            positive: vec![],
            negative: buffers.negative.clone(),
        };
        assert!(matches!(
            train_tabular_discriminator(&mdp, &empty, 10, 0.05),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_table_fails() {
        let mdp = empty8();
        let report = verify_greedy_optimality(&TabularReward::zeros(mdp.map()), &mdp);
        assert!(!report.holds);
        assert!(report
            .counterexamples
            .iter()
            .any(|c| matches!(c, Counterexample::Rollout { steps: None, .. })));
    }

    #[test]
    fn single_state_holds() {
        let mut map = GridMap::empty(3, 3);
        for p in map.free_cells() {
            if p != Pos::new(1, 1) {
                map.set(p, Cell::Wall);
            }
        }
        let mdp = TabularMDP::new(map, Pos::new(1, 1), 0.9).unwrap();
        let report = verify_greedy_optimality(&TabularReward::zeros(mdp.map()), &mdp);
        assert!(report.holds);
        assert_eq!(report.states_checked, 1);
    }

    #[test]
    fn trained_table_is_greedy_optimal_on_empty_grid() {
        let mdp = empty8();
        let b = emulate_converged_buffers(&mdp, 2000, 2000, 4);
        let r = train_tabular_discriminator(&mdp, &b, 2000, 0.05).unwrap();
        let report = verify_greedy_optimality(&r, &mdp);
        assert!(report.holds, "{:?}", &report.counterexamples[..report.counterexamples.len().min(5)]);
    }

    #[test]
    fn disconnected_maps_are_rejected() {
        let mut map = GridMap::empty(3, 1);
        map.set(Pos::new(1, 0), Cell::Wall);
        assert!(TabularMDP::new(map, Pos::new(0, 0), 0.9).is_err());
    }
}
