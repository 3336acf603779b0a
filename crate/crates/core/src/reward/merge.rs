use std::sync::Arc;

use crate::env::{Env, EnvSpec, StageVector, Transition};
use crate::error::{Error, Result};

/// A partition of stages `1..=N` into consecutive groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeSpec {
    /// Last (1-based) stage of each group, increasing and ending at `N`.
    ends: Vec<usize>,
}

impl MergeSpec {
    /// `groups` lists 1-based stage numbers, e.g. `[[1, 2], [3]]`.
    pub fn new(groups: &[Vec<usize>], num_stages: usize) -> Result<Self> {
        let mut next = 1;
        let mut ends = Vec::with_capacity(groups.len());
        for g in groups {
            if g.is_empty() {
                return Err(Error::config("empty stage group"));
            }
            for (i, &s) in g.iter().enumerate() {
                if s != next + i {
                    return Err(Error::config(format!(
                        "stage groups must be contiguous and in order; got {groups:?}"
                    )));
                }
            }
            next += g.len();
            ends.push(next - 1);
        }
        if next != num_stages + 1 {
            return Err(Error::config(format!(
                "stage groups {groups:?} do not cover stages 1..={num_stages}"
            )));
        }
        Ok(Self { ends })
    }

    pub fn identity(num_stages: usize) -> Self {
        Self {
            ends: (1..=num_stages).collect(),
        }
    }

    pub fn all(num_stages: usize) -> Self {
        Self { ends: vec![num_stages] }
    }

    pub fn merged_stages(&self) -> usize {
        self.ends.len()
    }

    /// A group is reached when its last member is, after closure.
    pub fn apply(&self, stages: &StageVector) -> StageVector {
        let closed = stages.closed();
        StageVector::new(self.ends.iter().map(|&e| closed[e - 1]).collect())
    }
}

/// Environment wrapper reporting merged stage flags.
#[derive(Clone, Debug)]
pub struct StageMerge<E> {
    inner: E,
    spec: MergeSpec,
}

pub fn stage_merge<E: Env>(env: E, groups: &[Vec<usize>]) -> Result<StageMerge<E>> {
    let spec = MergeSpec::new(groups, env.spec().num_stages)?;
    Ok(StageMerge { inner: env, spec })
}

impl<E> StageMerge<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn merge_spec(&self) -> &MergeSpec {
        &self.spec
    }
}

impl<E: Env> Env for StageMerge<E> {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            num_stages: self.spec.merged_stages(),
            ..self.inner.spec()
        }
    }

    fn reset(&mut self) -> Arc<[f64]> {
        self.inner.reset()
    }

    fn step(&mut self, action: usize) -> Result<(Transition, bool)> {
        let (mut t, done) = self.inner.step(action)?;
        t.next_stages = self.spec.apply(&t.next_stages);
        Ok((t, done))
    }

    fn reseed(&mut self, seed: u64) {
        self.inner.reseed(seed)
    }

    fn expert_action(&self) -> Option<usize> {
        self.inner.expert_action()
    }
}
