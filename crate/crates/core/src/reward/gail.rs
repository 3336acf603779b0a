use std::path::Path;

use crate::env::{semi_sparse_reward, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, train_step_with, Activation, Adam, DenseNet};
use crate::weights::WeightFile;

use super::learned::squash;
use super::RewardModel;

/// Semi-sparse reward plus `λ·tanh(logit)` from an agent-vs-demo classifier.
pub fn gail_combined_reward(gail_logit: f64, stage_index: usize, num_stages: usize, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(semi_sparse_reward(stage_index, num_stages)? + lambda * squash(gail_logit))
}

/// A single next-state classifier with demo transitions as positives and
/// agent transitions as negatives.
#[derive(Clone, Debug)]
pub struct GailReward {
    net: DenseNet,
    adam: Adam,
    lambda: f64,
    num_stages: usize,
    frozen: bool,
}

impl GailReward {
    pub fn new(obs_dim: usize, hidden: &[usize], lr: f64, lambda: f64, num_stages: usize, seed: u64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = DenseNet::new(&sizes, Activation::Tanh, seed)?;
        let adam = Adam::for_net(&net, lr);
        Ok(Self {
            net,
            adam,
            lambda,
            num_stages,
            frozen: false,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Probability that each `s'` came from a demonstration.
    pub fn demo_probability(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let features: Vec<f64> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
        Ok(self.net.forward_batch(&features)?.into_iter().map(crate::nn::sigmoid).collect())
    }

    /// One BCE step; returns the pre-update loss.
    pub fn train_step(&mut self, demos: &[&Transition], agent: &[&Transition]) -> Result<f64> {
        if self.frozen {
            return Err(Error::usage("frozen GAIL discriminator cannot be trained"));
        }
        if demos.is_empty() || agent.is_empty() {
            return Err(Error::usage("GAIL update needs demo and agent transitions"));
        }
        let inputs: Vec<f64> = demos
            .iter()
            .chain(agent)
            .flat_map(|t| t.next_obs.iter().copied())
            .collect();
        let mut labels = vec![1.0; demos.len()];
        labels.resize(demos.len() + agent.len(), 0.0);
        train_step_with(&mut self.net, &mut self.adam, &inputs, |z| bce_with_logits(z, &labels))
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut file = WeightFile::single(self.net.clone());
        file.meta.insert("kind".into(), "gail".into());
        file.meta.insert("lambda".into(), format!("{:?}", self.lambda));
        file.meta.insert("num_stages".into(), self.num_stages.to_string());
        file
    }

    pub fn from_weight_file(mut file: WeightFile) -> Result<Self> {
        if file.meta_value("kind")? != "gail" || file.nets.len() != 1 {
            return Err(Error::format("weight file does not hold a GAIL discriminator"));
        }
        let lambda = file
            .meta_value("lambda")?
            .parse()
            .map_err(|_| Error::format("bad lambda"))?;
        let num_stages = file
            .meta_value("num_stages")?
            .parse()
            .map_err(|_| Error::format("bad stage count"))?;
        let net = file.nets.remove(0);
        let adam = Adam::for_net(&net, Adam::DEFAULT_LR);
        Ok(Self {
            net,
            adam,
            lambda,
            num_stages,
            frozen: true,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(WeightFile::load(path)?)
    }
}

impl RewardModel for GailReward {
    fn num_stages(&self) -> usize {
        self.num_stages
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let features: Vec<f64> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
        let logits = self.net.forward_batch(&features)?;
        batch
            .iter()
            .zip(logits)
            .map(|(t, z)| gail_combined_reward(z, t.next_stage_index(), self.num_stages, self.lambda))
            .collect()
    }

    fn success_reward(&self) -> f64 {
        self.num_stages as f64 + self.lambda
    }

    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        if spec.num_stages != self.num_stages || spec.obs_dim != self.net.input_dim() {
            return Err(Error::compat(format!(
                "GAIL reward built for {} stages and {} inputs, environment has {} and {}",
                self.num_stages,
                self.net.input_dim(),
                spec.num_stages,
                spec.obs_dim
            )));
        }
        Ok(())
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StageVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn point(rng: &mut ChaCha8Rng) -> Transition {
        let p: Arc<[f64]> = Arc::from(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        Transition {
            obs: p.clone(),
            action: 0,
            next_obs: p,
            next_stages: StageVector::new(vec![false]),
            success: false,
            terminal: false,
        }
    }

    #[test]
    fn lambda_zero_is_semi_sparse() {
        for k in 0..=3 {
            assert_eq!(gail_combined_reward(4.2, k, 3, 0.0).unwrap(), k as f64);
            assert_eq!(gail_combined_reward(0.0, k, 3, 0.5).unwrap(), k as f64);
        }
        assert!(gail_combined_reward(0.0, 0, 1, -0.1).is_err());
    }

    #[test]
    fn matching_distributions_stay_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gail = GailReward::new(2, &[32], 3e-4, 1.0 / 3.0, 1, 1).unwrap();
        for _ in 0..2000 {
            let demos: Vec<Transition> = (0..32).map(|_| point(&mut rng)).collect();
            let agent: Vec<Transition> = (0..32).map(|_| point(&mut rng)).collect();
            gail.train_step(&demos.iter().collect::<Vec<_>>(), &agent.iter().collect::<Vec<_>>())
                .unwrap();
        }
        let held_out: Vec<Transition> = (0..500).map(|_| point(&mut rng)).collect();
        let probs = gail.demo_probability(&held_out.iter().collect::<Vec<_>>()).unwrap();
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        assert!((0.4..=0.6).contains(&mean), "mean demo probability {mean}");
    }

    #[test]
    fn frozen_gail_rejects_updates() {
        let mut gail = GailReward::new(2, &[4], 3e-4, 0.1, 1, 0).unwrap();
        gail.freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = point(&mut rng);
        assert!(gail.train_step(&[&t], &[&t]).is_err());
    }
}
