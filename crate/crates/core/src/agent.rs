//! DQN agent over discrete actions.

use std::path::Path;

use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nn::{train_step_with, Activation, Adam, DenseNet};
use crate::reward::RewardModel;
use crate::weights::WeightFile;

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self {
            start: eps,
            end: eps,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) || self.end > self.start {
            return Err(Error::config(format!(
                "epsilon must satisfy 0 <= end <= start <= 1, got {} -> {}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Network and optimizer settings for [`QAgent`].
#[derive(Clone, Debug, PartialEq)]
pub struct DqnSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for DqnSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            gamma: 0.95,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_steps: 0,
            },
        }
    }
}

impl DqnSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        self.epsilon.validate()
    }
}

/// Online and target Q-networks with ε-greedy action selection.
#[derive(Clone, Debug)]
pub struct QAgent {
    online: DenseNet,
    target: DenseNet,
    adam: Adam,
    gamma: f64,
    epsilon: EpsilonSchedule,
}

impl QAgent {
    pub fn new(obs_dim: usize, action_count: usize, settings: &DqnSettings, seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&settings.hidden);
        sizes.push(action_count);
        Self::from_net(DenseNet::new(&sizes, settings.activation, seed)?, settings)
    }

    /// Start from existing Q-network weights (e.g. a saved policy).
    pub fn from_net(net: DenseNet, settings: &DqnSettings) -> Result<Self> {
        settings.validate()?;
        let adam = Adam::for_net(&net, settings.lr);
        Ok(Self {
            target: net.clone(),
            online: net,
            adam,
            gamma: settings.gamma,
            epsilon: settings.epsilon,
        })
    }

    pub fn online(&self) -> &DenseNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut DenseNet {
        &mut self.online
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: EpsilonSchedule) -> Result<()> {
        epsilon.validate()?;
        self.epsilon = epsilon;
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(obs)
    }

    /// Argmax of the online Q-values, ties to the lowest index.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[f64], step: u64, rng: &mut R) -> Result<usize> {
        let q = self.q_values(obs)?;
        if rng.random::<f64>() < self.epsilon.value(step) {
            Ok(rng.random_range(0..q.len()))
        } else {
            Ok(argmax(&q))
        }
    }

    /// One MSE step toward `r + γ(1 - terminal)·max_a Q_target(s', a)` with
    /// rewards recomputed by `reward_fn`. Returns the pre-update loss.
    pub fn dqn_update<M: RewardModel + ?Sized>(&mut self, batch: &[&Transition], reward_fn: &M) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("DQN update needs a non-empty batch"));
        }
        let rewards = reward_fn.rewards(batch)?;
        self.update_with_rewards(batch, &rewards)
    }

    /// [`Self::dqn_update`] with precomputed rewards.
    pub fn update_with_rewards(&mut self, batch: &[&Transition], rewards: &[f64]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("DQN update needs a non-empty batch"));
        }
        if rewards.len() != batch.len() {
            return Err(Error::Shape {
                expected: batch.len(),
                got: rewards.len(),
            });
        }
        let a_count = self.action_count();
        let next: Vec<f64> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
        let next_q = self.target.forward_batch(&next)?;
        let targets: Vec<f64> = batch
            .iter()
            .zip(rewards)
            .zip(next_q.chunks_exact(a_count))
            .map(|((t, &r), q)| {
                let bootstrap = if t.terminal { 0.0 } else { q.iter().copied().fold(f64::NEG_INFINITY, f64::max) };
                r + self.gamma * bootstrap
            })
            .collect();
        if let Some(t) = batch.iter().find(|t| t.action >= a_count) {
            return Err(Error::usage(format!("action {} out of range", t.action)));
        }
        let inputs: Vec<f64> = batch.iter().flat_map(|t| t.obs.iter().copied()).collect();
        let scale = 1.0 / batch.len() as f64;
        train_step_with(&mut self.online, &mut self.adam, &inputs, |out| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; out.len()];
            for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
                let j = i * a_count + t.action;
                let diff = out[j] - y;
                loss += diff * diff * scale;
                grad[j] = 2.0 * diff * scale;
            }
            (loss, grad)
        })
    }

    /// Copy the online weights into the target net.
    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.online)
            .expect("online and target nets share one shape");
    }

    pub fn save_policy(&self, path: impl AsRef<Path>) -> Result<()> {
        policy_file(&self.online).save(path)
    }
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn policy_file(net: &DenseNet) -> WeightFile {
    let mut file = WeightFile::single(net.clone());
    file.meta.insert("kind".into(), "policy".into());
    file
}

/// Load a Q-network saved by [`QAgent::save_policy`].
pub fn load_policy(path: impl AsRef<Path>) -> Result<DenseNet> {
    let mut file = WeightFile::load(path)?;
    if file.meta_value("kind")? != "policy" || file.nets.len() != 1 {
        return Err(Error::format("weight file does not hold a policy"));
    }
    Ok(file.nets.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StageVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn settings(eps: f64) -> DqnSettings {
        DqnSettings {
            epsilon: EpsilonSchedule::constant(eps),
            ..Default::default()
        }
    }

    /// A linear net whose output equals its bias for zero input.
    fn agent_with_q(q: &[f64]) -> QAgent {
        let mut net = DenseNet::zeros(&[2, q.len()], Activation::Relu).unwrap();
        let n = net.num_params();
        net.params_mut()[n - q.len()..].copy_from_slice(q);
        QAgent::from_net(net, &settings(0.0)).unwrap()
    }

    fn one_hot(i: usize, n: usize) -> Arc<[f64]> {
        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    struct ByState(Vec<f64>);

    impl RewardModel for ByState {
        fn num_stages(&self) -> usize {
            1
        }

        fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
            Ok(batch
                .iter()
                .map(|t| {
                    let s = t.next_obs.iter().position(|&v| v == 1.0).unwrap();
                    self.0[s]
                })
                .collect())
        }

        fn success_reward(&self) -> f64 {
            1.0
        }
    }

    fn transition(s: usize, a: usize, s2: usize, n: usize, terminal: bool) -> Transition {
        Transition {
            obs: one_hot(s, n),
            action: a,
            next_obs: one_hot(s2, n),
            next_stages: StageVector::new(vec![terminal]),
            success: terminal,
            terminal,
        }
    }

    #[test]
    fn epsilon_schedule_is_monotone() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 1000,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(500) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(1000), 0.05);
        assert_eq!(s.value(10_000), 0.05);
        let mut prev = f64::INFINITY;
        for step in 0..1200 {
            let v = s.value(step);
            assert!(v <= prev && (0.05..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn uniform_when_epsilon_is_one() {
        let mut agent = agent_with_q(&[0.0, 3.0, 1.0, 1.0, 1.0]);
        agent.set_epsilon(EpsilonSchedule::constant(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 5];
        for step in 0..100_000 {
            counts[agent.select_action(&[0.0, 0.0], step, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn greedy_argmax_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = agent_with_q(&[0.0, 3.0, 1.0, 1.0, 1.0]);
        assert_eq!(agent.select_action(&[0.0, 0.0], 0, &mut rng).unwrap(), 1);
        let agent = agent_with_q(&[2.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(agent.select_action(&[0.0, 0.0], 0, &mut rng).unwrap(), 0);
        assert!(matches!(agent.select_action(&[0.0], 0, &mut rng), Err(Error::Shape { .. })));
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut agent = agent_with_q(&[0.0, 0.0]);
        agent.online_mut().params_mut().iter_mut().for_each(|p| *p = 0.0);
        agent.sync_target();
        let mut t = transition(0, 0, 1, 2, true);
        t.obs = Arc::from(vec![0.0, 0.0]);
        // Loss at Q(s,a) = 0 with target 1 is exactly 1.
        let loss = agent.dqn_update(&[&t], &ByState(vec![0.0, 1.0])).unwrap();
        assert_eq!(loss, 1.0);
        assert!(agent.dqn_update(&[], &ByState(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn zero_gamma_targets_equal_rewards() {
        let mut agent = QAgent::new(3, 2, &settings(0.0), 1).unwrap();
        agent.set_gamma(0.0).unwrap();
        let ts = [transition(0, 0, 1, 3, false), transition(1, 1, 2, 3, false)];
        let refs: Vec<&Transition> = ts.iter().collect();
        let rewards = [0.25, -0.5];
        let q: Vec<f64> = ts
            .iter()
            .map(|t| agent.q_values(&t.obs).unwrap()[t.action])
            .collect();
        let expected = ((q[0] - 0.25).powi(2) + (q[1] + 0.5).powi(2)) / 2.0;
        let loss = agent.update_with_rewards(&refs, &rewards).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn converges_to_value_iteration_on_three_states() {
        // States 0, 1, 2 (2 terminal); action 0 moves right, action 1 stays.
        let n = 3;
        let next = |s: usize, a: usize| if a == 0 { (s + 1).min(2) } else { s };
        let reward = [0.1, 0.2, 1.0];
        let gamma = 0.9;
        let ts: Vec<Transition> = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| transition(s, a, next(s, a), n, next(s, a) == 2))
            .collect();

        let mut q_star = [[0.0f64; 2]; 2];
        for _ in 0..2000 {
            let prev = q_star;
            for s in 0..2 {
                for a in 0..2 {
                    let s2 = next(s, a);
                    let v = if s2 == 2 { 0.0 } else { prev[s2][0].max(prev[s2][1]) };
                    q_star[s][a] = reward[s2] + gamma * v;
                }
            }
        }

        let s = DqnSettings {
            hidden: vec![],
            lr: 1e-2,
            gamma,
            ..settings(0.0)
        };
        let mut agent = QAgent::new(n, 2, &s, 3).unwrap();
        let refs: Vec<&Transition> = ts.iter().collect();
        let model = ByState(reward.to_vec());
        for i in 0..20_000 {
            agent.dqn_update(&refs, &model).unwrap();
            if i % 50 == 0 {
                agent.sync_target();
            }
        }
        for s in 0..2 {
            let q = agent.q_values(&one_hot(s, n)).unwrap();
            for a in 0..2 {
                assert!((q[a] - q_star[s][a]).abs() < 1e-3, "Q({s},{a}) = {} vs {}", q[a], q_star[s][a]);
            }
        }
    }

    #[test]
    fn sync_copies_online_exactly() {
        let mut agent = QAgent::new(4, 5, &settings(0.0), 9).unwrap();
        let t = transition(0, 2, 1, 4, false);
        agent.dqn_update(&[&t], &ByState(vec![1.0; 4])).unwrap();
        assert_ne!(agent.online(), agent.target());
        agent.sync_target();
        agent.sync_target();
        assert_eq!(agent.online(), agent.target());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = agent.online().forward(&x).unwrap();
            let b = agent.target().forward(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn policy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.drsw");
        let agent = QAgent::new(13, 5, &settings(0.0), 4).unwrap();
        agent.save_policy(&path).unwrap();
        assert_eq!(&load_policy(&path).unwrap(), agent.online());
    }
}
