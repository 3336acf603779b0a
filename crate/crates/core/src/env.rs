//! Environments with stage indicators.
//!
//! A task with `N` stages reports `N` boolean flags per state. The last flag
//! is the task's success signal. Flags are stored as the environment reports
//! them and are closed on read: a later flag being set implies every earlier
//! one, so `[false, true, false]` counts as stage 2.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Raw stage flags `g_1..g_N` of a single state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StageVector(Vec<bool>);

impl StageVector {
    pub fn new(flags: Vec<bool>) -> Self {
        StageVector(flags)
    }

    pub fn raw(&self) -> &[bool] {
        &self.0
    }

    pub fn num_stages(&self) -> usize {
        self.0.len()
    }

    /// Flags after monotone closure.
    pub fn closed(&self) -> Vec<bool> {
        let mut flags = self.0.clone();
        for i in (1..flags.len()).rev() {
            flags[i - 1] |= flags[i];
        }
        flags
    }

    pub fn index(&self) -> usize {
        stage_index_of(self)
    }

    /// The raw success flag (the last one).
    pub fn success(&self) -> bool {
        self.0.last().copied().unwrap_or(false)
    }
}

/// Number of set flags after closure, i.e. the highest set flag's position.
pub fn stage_index_of(vector: &StageVector) -> usize {
    vector.0.iter().rposition(|&f| f).map_or(0, |i| i + 1)
}

/// One environment step. Rewards are not stored; they are computed from
/// `next_obs` and `next_stages` by whatever reward model consumes the data.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Arc<[f64]>,
    pub action: usize,
    pub next_obs: Arc<[f64]>,
    pub next_stages: StageVector,
    pub success: bool,
    pub terminal: bool,
}

impl Transition {
    pub fn next_stage_index(&self) -> usize {
        self.next_stages.index()
    }
}

/// Stage index of a trajectory: the maximum over its visited states.
pub fn trajectory_stage_index(transitions: &[Transition]) -> Result<usize> {
    transitions
        .iter()
        .map(Transition::next_stage_index)
        .max()
        .ok_or_else(|| Error::usage("trajectory has no transitions"))
}

/// A non-empty episode with its cached stage index.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
    stage_index: usize,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let stage_index = trajectory_stage_index(&transitions)?;
        Ok(Self {
            transitions,
            stage_index,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }

    pub fn succeeded(&self) -> bool {
        self.transitions.iter().any(|t| t.success)
    }
}

/// Sparse reward: 1 on success, 0 otherwise.
pub fn sparse_reward(success: bool) -> f64 {
    if success {
        1.0
    } else {
        0.0
    }
}

/// Semi-sparse reward: the stage index itself.
pub fn semi_sparse_reward(stage_index: usize, num_stages: usize) -> Result<f64> {
    if stage_index > num_stages {
        return Err(Error::usage(format!(
            "stage index {stage_index} out of range for a {num_stages}-stage task"
        )));
    }
    Ok(stage_index as f64)
}

/// Static description of an environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_count: usize,
    pub num_stages: usize,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn new(obs_dim: usize, action_count: usize, num_stages: usize, max_episode_steps: usize) -> Result<Self> {
        if obs_dim == 0 || action_count == 0 || num_stages == 0 || max_episode_steps == 0 {
            return Err(Error::config("environment spec fields must all be positive"));
        }
        Ok(Self {
            obs_dim,
            action_count,
            num_stages,
            max_episode_steps,
        })
    }
}

/// Episodic environment with stage indicators and discrete actions.
pub trait Env {
    fn spec(&self) -> EnvSpec;

    /// Start a new episode and return its first observation.
    fn reset(&mut self) -> Arc<[f64]>;

    /// Apply an action; the flag is true when the episode is over
    /// (success or step limit).
    fn step(&mut self, action: usize) -> Result<(Transition, bool)>;

    /// Restart the environment's own random stream.
    fn reseed(&mut self, seed: u64);

    /// A shortest-path action from the current state, when the environment
    /// knows one.
    fn expert_action(&self) -> Option<usize> {
        None
    }
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn spec(&self) -> EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self) -> Arc<[f64]> {
        (**self).reset()
    }

    fn step(&mut self, action: usize) -> Result<(Transition, bool)> {
        (**self).step(action)
    }

    fn reseed(&mut self, seed: u64) {
        (**self).reseed(seed)
    }

    fn expert_action(&self) -> Option<usize> {
        (**self).expert_action()
    }
}

#[cfg(test)]
pub(crate) fn transition_with_stages(flags: &[bool]) -> Transition {
    let obs: Arc<[f64]> = Arc::from(vec![0.0; 2]);
    Transition {
        obs: obs.clone(),
        action: 0,
        next_obs: obs,
        next_stages: StageVector::new(flags.to_vec()),
        success: flags.last().copied().unwrap_or(false),
        terminal: flags.last().copied().unwrap_or(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(flags: &[bool]) -> StageVector {
        StageVector::new(flags.to_vec())
    }

    #[test]
    fn stage_index_examples() {
        assert_eq!(stage_index_of(&sv(&[false, false, false])), 0);
        assert_eq!(stage_index_of(&sv(&[true, true, false])), 2);
        assert_eq!(sv(&[false, true, false]).closed(), vec![true, true, false]);
        assert_eq!(stage_index_of(&sv(&[false, true, false])), 2);
        assert_eq!(stage_index_of(&sv(&[false, false, true])), 3);
    }

    #[test]
    fn index_equals_closed_count() {
        for bits in 0u32..16 {
            let flags: Vec<bool> = (0..4).map(|i| bits >> i & 1 == 1).collect();
            let v = sv(&flags);
            assert_eq!(v.index(), v.closed().iter().filter(|&&f| f).count());
        }
    }

    #[test]
    fn trajectory_index_is_max() {
        let steps = |idx: &[usize], n: usize| -> Vec<Transition> {
            idx.iter()
                .map(|&k| transition_with_stages(&(0..n).map(|i| i < k).collect::<Vec<_>>()))
                .collect()
        };
        assert_eq!(trajectory_stage_index(&steps(&[0, 1, 0], 1)).unwrap(), 1);
        assert_eq!(trajectory_stage_index(&steps(&[0, 0, 0], 3)).unwrap(), 0);
        let t = Trajectory::new(steps(&[0, 1, 2, 3], 3)).unwrap();
        assert_eq!(t.stage_index(), 3);
        assert!(t.succeeded());
        assert!(matches!(trajectory_stage_index(&[]), Err(Error::Usage(_))));
        assert!(Trajectory::new(vec![]).is_err());
    }

    #[test]
    fn sparse_and_semi_sparse() {
        assert_eq!(sparse_reward(true), 1.0);
        assert_eq!(sparse_reward(false), 0.0);
        assert_eq!(sparse_reward(true), sparse_reward(true));
        assert_eq!(semi_sparse_reward(2, 3).unwrap(), 2.0);
        assert_eq!(semi_sparse_reward(0, 3).unwrap(), 0.0);
        assert_eq!(semi_sparse_reward(3, 3).unwrap(), 3.0);
        assert!(matches!(semi_sparse_reward(4, 3), Err(Error::Usage(_))));
    }

    #[test]
    fn env_spec_must_be_positive() {
        assert!(EnvSpec::new(13, 5, 1, 120).is_ok());
        assert!(EnvSpec::new(13, 0, 1, 120).is_err());
    }

    proptest! {
        #[test]
        fn stage_index_is_monotone(flags in proptest::collection::vec(any::<bool>(), 1..8), flip in 0usize..8) {
            let flip = flip % flags.len();
            let mut raised = flags.clone();
            raised[flip] = true;
            prop_assert!(sv(&raised).index() >= sv(&flags).index());
        }

        #[test]
        fn appending_lower_stage_keeps_index(
            idx in proptest::collection::vec(0usize..=3, 1..20),
            extra in 0usize..=3,
        ) {
            let mk = |k: usize| transition_with_stages(&(0..3).map(|i| i < k).collect::<Vec<_>>());
            let mut steps: Vec<Transition> = idx.iter().map(|&k| mk(k)).collect();
            let before = trajectory_stage_index(&steps).unwrap();
            let extra = extra.min(before);
            steps.push(mk(extra));
            prop_assert_eq!(trajectory_stage_index(&steps).unwrap(), before);
        }

        #[test]
        fn semi_sparse_strictly_increasing(k in 0usize..10) {
            prop_assert!(semi_sparse_reward(k + 1, 10).unwrap() > semi_sparse_reward(k, 10).unwrap());
        }
    }
}
