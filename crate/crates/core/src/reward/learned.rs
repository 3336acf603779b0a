use std::path::Path;

use crate::env::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::weights::WeightFile;

use super::discriminator::{DiscriminatorBank, InputMode};
use super::RewardModel;

pub const DEFAULT_ALPHA: f64 = 1.0 / 3.0;

/// Discriminator logits are clamped to this magnitude before `tanh`.
///
/// Saturated `tanh` rounds to exactly ±1 in `f64`, which would put a reward
/// on the open end of its band. At 12 the band edge stays about `1e-10`
/// away, well above the rounding step of `k` for any realistic stage count.
pub const LOGIT_BOUND: f64 = 12.0;

/// How per-stage discriminator outputs combine into a reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardFormula {
    /// `k + α·tanh(f_k(s'))`.
    PerStage,
    /// `k + α·Σ_j tanh(f_j(s'))`, every discriminator contributing.
    SumOverStages,
}

impl RewardFormula {
    pub fn name(self) -> &'static str {
        match self {
            RewardFormula::PerStage => "per-stage",
            RewardFormula::SumOverStages => "sum-over-stages",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-stage" => Some(RewardFormula::PerStage),
            "sum-over-stages" => Some(RewardFormula::SumOverStages),
            _ => None,
        }
    }
}

pub(crate) fn squash(logit: f64) -> f64 {
    logit.clamp(-LOGIT_BOUND, LOGIT_BOUND).tanh()
}

/// Stage-banded reward from discriminator logits.
#[derive(Clone, Debug)]
pub struct LearnedReward {
    bank: DiscriminatorBank,
    alpha: f64,
    formula: RewardFormula,
}

impl LearnedReward {
    pub fn new(bank: DiscriminatorBank, alpha: f64) -> Result<Self> {
        Self::with_formula(bank, alpha, RewardFormula::PerStage)
    }

    pub fn with_formula(bank: DiscriminatorBank, alpha: f64, formula: RewardFormula) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::config(format!("alpha must lie in (0, 1/2), got {alpha}")));
        }
        Ok(Self { bank, alpha, formula })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn formula(&self) -> RewardFormula {
        self.formula
    }

    pub fn bank(&self) -> &DiscriminatorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut DiscriminatorBank {
        &mut self.bank
    }

    pub fn into_bank(self) -> DiscriminatorBank {
        self.bank
    }

    /// Reward for stage `k` given the relevant logits. `logits[j]` is
    /// `f_j(s')`; the per-stage formula reads only `logits[k]`.
    pub fn reward_from_logits(&self, k: usize, logits: &[f64]) -> Result<f64> {
        let n = self.bank.num_stages();
        if k > n {
            return Err(Error::usage(format!("stage index {k} out of range for a {n}-stage reward")));
        }
        if k == n {
            return Ok(n as f64 + self.alpha);
        }
        let dense = match self.formula {
            RewardFormula::PerStage => squash(logits[k]),
            RewardFormula::SumOverStages => logits.iter().map(|&z| squash(z)).sum(),
        };
        Ok(k as f64 + self.alpha * dense)
    }

    /// Save the bank with its reward settings.
    pub fn to_weight_file(&self) -> WeightFile {
        let mut file = WeightFile {
            nets: self.bank.nets().cloned().collect(),
            ..Default::default()
        };
        let mode = match self.bank.input_mode() {
            InputMode::NextState => "next-state".to_string(),
            InputMode::StateAction { action_count } => format!("state-action:{action_count}"),
        };
        file.meta.insert("kind".into(), "reward-bank".into());
        file.meta.insert("alpha".into(), format!("{:?}", self.alpha));
        file.meta.insert("formula".into(), self.formula.name().into());
        file.meta.insert("input_mode".into(), mode);
        file.meta.insert("num_stages".into(), self.bank.num_stages().to_string());
        file
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        if file.meta_value("kind")? != "reward-bank" {
            return Err(Error::format("weight file does not hold a reward bank"));
        }
        let alpha: f64 = file
            .meta_value("alpha")?
            .parse()
            .map_err(|_| Error::format("bad alpha in reward bank"))?;
        let formula = RewardFormula::parse(file.meta_value("formula")?)
            .ok_or_else(|| Error::format("unknown reward formula"))?;
        let input_mode = match file.meta_value("input_mode")? {
            "next-state" => InputMode::NextState,
            other => {
                let count = other
                    .strip_prefix("state-action:")
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format(format!("unknown input mode {other:?}")))?;
                InputMode::StateAction { action_count: count }
            }
        };
        let n: usize = file
            .meta_value("num_stages")?
            .parse()
            .map_err(|_| Error::format("bad stage count in reward bank"))?;
        if n != file.nets.len() {
            return Err(Error::format(format!("reward bank declares {n} stages but holds {} nets", file.nets.len())));
        }
        let bank = DiscriminatorBank::from_nets(file.nets, input_mode)?;
        Self::with_formula(bank, alpha, formula).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    /// Load a saved bank; every discriminator comes back frozen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(WeightFile::load(path)?)
    }

    fn logits_for(&self, k: usize, features: &[f64]) -> Result<Vec<f64>> {
        let n = self.bank.num_stages();
        match self.formula {
            RewardFormula::PerStage if k < n => Ok(vec![0.0; k]
                .into_iter()
                .chain(self.bank.logits(k, features)?)
                .collect()),
            RewardFormula::PerStage => Ok(Vec::new()),
            RewardFormula::SumOverStages => (0..n).map(|j| Ok(self.bank.logits(j, features)?[0])).collect(),
        }
    }
}

/// Reward of a single feature row (`s'` in next-state mode) at stage `k`.
pub fn drs_reward(lr: &LearnedReward, features: &[f64], k: usize) -> Result<f64> {
    let n = lr.bank.num_stages();
    if k > n {
        return Err(Error::usage(format!("stage index {k} out of range for a {n}-stage reward")));
    }
    let logits = lr.logits_for(k, features)?;
    lr.reward_from_logits(k, &logits)
}

/// Reward with a single success/failure discriminator. `lr` must have been
/// built with one stage.
pub fn one_stage_reward(lr: &LearnedReward, features: &[f64], success: bool) -> Result<f64> {
    if lr.bank.num_stages() != 1 {
        return Err(Error::usage(format!(
            "one-stage reward needs a one-stage bank, got {} stages",
            lr.bank.num_stages()
        )));
    }
    drs_reward(lr, features, usize::from(success))
}

impl RewardModel for LearnedReward {
    fn num_stages(&self) -> usize {
        self.bank.num_stages()
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let n = self.bank.num_stages();
        let mode = self.bank.input_mode();
        let stages: Vec<usize> = batch.iter().map(|t| t.next_stage_index()).collect();
        if let Some(&k) = stages.iter().find(|&&k| k > n) {
            return Err(Error::usage(format!("stage index {k} out of range for a {n}-stage reward")));
        }
        let mut out = vec![0.0; batch.len()];
        match self.formula {
            RewardFormula::PerStage => {
                for k in 0..=n {
                    let idx: Vec<usize> = (0..batch.len()).filter(|&i| stages[i] == k).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    if k == n {
                        for i in idx {
                            out[i] = n as f64 + self.alpha;
                        }
                        continue;
                    }
                    let logits = self.bank.logits(k, &mode.features(idx.iter().map(|&i| batch[i])))?;
                    for (i, z) in idx.into_iter().zip(logits) {
                        out[i] = k as f64 + self.alpha * squash(z);
                    }
                }
            }
            RewardFormula::SumOverStages => {
                let features = mode.features(batch.iter().copied());
                let mut dense = vec![0.0; batch.len()];
                for j in 0..n {
                    for (d, z) in dense.iter_mut().zip(self.bank.logits(j, &features)?) {
                        *d += squash(z);
                    }
                }
                for i in 0..batch.len() {
                    out[i] = if stages[i] == n {
                        n as f64 + self.alpha
                    } else {
                        stages[i] as f64 + self.alpha * dense[i]
                    };
                }
            }
        }
        Ok(out)
    }

    fn success_reward(&self) -> f64 {
        self.bank.num_stages() as f64 + self.alpha
    }

    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        let n = self.bank.num_stages();
        if spec.num_stages != n {
            return Err(Error::compat(format!("reward expects {n} stages, environment has {}", spec.num_stages)));
        }
        let want = self.bank.input_mode().input_dim(spec.obs_dim);
        if let InputMode::StateAction { action_count } = self.bank.input_mode() {
            if action_count != spec.action_count {
                return Err(Error::compat(format!(
                    "reward expects {action_count} actions, environment has {}",
                    spec.action_count
                )));
            }
        }
        if want != self.bank.input_dim() {
            return Err(Error::compat(format!(
                "reward expects {}-dimensional inputs, environment gives {want}",
                self.bank.input_dim()
            )));
        }
        Ok(())
    }

    fn is_frozen(&self) -> bool {
        self.bank.all_frozen()
    }
}
