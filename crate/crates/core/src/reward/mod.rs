//! Reward models.
//!
//! Every model maps a transition to a scalar computed from the next state
//! `s'` and its stage index. Models report the reward of a success state,
//! which is also the supremum of everything they can emit; training loops use
//! it to treat success as an absorbing state.

mod discriminator;
mod gail;
mod learned;
mod merge;

pub use discriminator::{
    probe_discriminators, train_discriminators, DiscStatus, Discriminator, DiscriminatorBank, EarlyStop,
    InputMode, StageReport,
};
pub use gail::{gail_combined_reward, GailReward};
pub use learned::{drs_reward, one_stage_reward, LearnedReward, RewardFormula, DEFAULT_ALPHA, LOGIT_BOUND};
pub use merge::{stage_merge, MergeSpec, StageMerge};

use crate::env::{semi_sparse_reward, sparse_reward, EnvSpec, Transition};
use crate::error::{Error, Result};

/// A reward computed from transitions at training time.
pub trait RewardModel {
    fn num_stages(&self) -> usize;

    /// Reward of each transition in `batch`.
    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>>;

    /// Reward of a success state; no transition is rewarded more.
    fn success_reward(&self) -> f64;

    fn reward(&self, t: &Transition) -> Result<f64> {
        Ok(self.rewards(&[t])?[0])
    }

    /// Whether the model can score transitions from an environment with
    /// this spec.
    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        if spec.num_stages != self.num_stages() {
            return Err(Error::compat(format!(
                "reward expects {} stages, environment has {}",
                self.num_stages(),
                spec.num_stages
            )));
        }
        Ok(())
    }

    /// True when the model no longer changes.
    fn is_frozen(&self) -> bool {
        true
    }
}

impl<R: RewardModel + ?Sized> RewardModel for &R {
    fn num_stages(&self) -> usize {
        (**self).num_stages()
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        (**self).rewards(batch)
    }

    fn success_reward(&self) -> f64 {
        (**self).success_reward()
    }

    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        (**self).check_compatible(spec)
    }

    fn is_frozen(&self) -> bool {
        (**self).is_frozen()
    }
}

impl<R: RewardModel + ?Sized> RewardModel for Box<R> {
    fn num_stages(&self) -> usize {
        (**self).num_stages()
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        (**self).rewards(batch)
    }

    fn success_reward(&self) -> f64 {
        (**self).success_reward()
    }

    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        (**self).check_compatible(spec)
    }

    fn is_frozen(&self) -> bool {
        (**self).is_frozen()
    }
}

/// 1 on success, 0 otherwise.
#[derive(Clone, Copy, Debug)]
pub struct SparseReward {
    pub num_stages: usize,
}

impl RewardModel for SparseReward {
    fn num_stages(&self) -> usize {
        self.num_stages
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        Ok(batch.iter().map(|t| sparse_reward(t.success)).collect())
    }

    fn success_reward(&self) -> f64 {
        1.0
    }
}

/// The stage index of `s'`.
#[derive(Clone, Copy, Debug)]
pub struct SemiSparseReward {
    pub num_stages: usize,
}

impl RewardModel for SemiSparseReward {
    fn num_stages(&self) -> usize {
        self.num_stages
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| semi_sparse_reward(t.next_stage_index(), self.num_stages))
            .collect()
    }

    fn success_reward(&self) -> f64 {
        self.num_stages as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::transition_with_stages;

    #[test]
    fn sparse_and_semi_sparse_models() {
        let t0 = transition_with_stages(&[true, false, false]);
        let t3 = transition_with_stages(&[true, true, true]);
        let sparse = SparseReward { num_stages: 3 };
        let semi = SemiSparseReward { num_stages: 3 };
        assert_eq!(sparse.rewards(&[&t0, &t3]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(semi.rewards(&[&t0, &t3]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(semi.success_reward(), 3.0);
        let too_many = transition_with_stages(&[true, true, true, true]);
        assert!(semi.reward(&too_many).is_err());
    }
}
