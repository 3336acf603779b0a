//! Training phases: reward learning, reward reuse, and policy fine-tuning.
//!
//! All phases share one loop. Each env step appends to the replay buffer;
//! finished episodes go to the reward learner as whole trajectories. After a
//! warmup, every `train_every` steps the learner and the agent each take one
//! gradient step, with rewards recomputed from the current reward model.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{DqnSettings, EpsilonSchedule, QAgent};
use crate::buffers::{ReplayBuffer, StageBuffers, DEFAULT_STAGE_CAPACITY};
use crate::env::{Env, EnvSpec, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::grid::EnvId;
use crate::nn::{Activation, DenseNet};
use crate::reward::{
    probe_discriminators, stage_merge, train_discriminators, DiscriminatorBank, EarlyStop, GailReward, InputMode,
    LearnedReward, RewardFormula, RewardModel, DEFAULT_ALPHA,
};

/// An environment family member, optionally with merged stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub env: EnvId,
    pub merge: Option<Vec<Vec<usize>>>,
}

impl From<EnvId> for Task {
    fn from(env: EnvId) -> Self {
        Self { env, merge: None }
    }
}

impl Task {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Env + Send>> {
        let env = self.env.build(seed)?;
        match &self.merge {
            None => Ok(env),
            Some(groups) => Ok(Box::new(stage_merge(env, groups)?)),
        }
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        Ok(self.build(0)?.spec())
    }
}

/// Independent stream `stream` derived from a run seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_ENV: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_AGENT: u64 = 3;
const STREAM_REWARD: u64 = 4;
const STREAM_DEMOS: u64 = 5;

/// Agent and loop settings shared by every phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub total_steps: u64,
    pub seed: u64,
    pub warmup_steps: u64,
    /// Env steps per gradient step.
    pub train_every: u64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    /// Starting ε when continuing from a trained policy.
    pub finetune_epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which ε decays.
    pub epsilon_fraction: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            total_steps: 150_000,
            seed: 0,
            warmup_steps: 1000,
            train_every: 1,
            batch_size: 128,
            target_sync_every: 500,
            eval_every: 5000,
            eval_episodes: 20,
            replay_capacity: 200_000,
            epsilon_start: 1.0,
            finetune_epsilon_start: 0.3,
            epsilon_end: 0.05,
            epsilon_fraction: 0.3,
            hidden: vec![64, 64],
            lr: 1e-3,
            gamma: 0.95,
        }
    }
}

impl TrainSettings {
    pub fn dqn(&self) -> DqnSettings {
        DqnSettings {
            hidden: self.hidden.clone(),
            activation: Activation::Relu,
            lr: self.lr,
            gamma: self.gamma,
            epsilon: EpsilonSchedule {
                start: self.epsilon_start,
                end: self.epsilon_end,
                decay_steps: (self.epsilon_fraction * self.total_steps as f64).round() as u64,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_every == 0 || self.target_sync_every == 0 || self.eval_every == 0 {
            return Err(Error::config("train_every, target_sync_every and eval_every must be positive"));
        }
        if self.batch_size == 0 || self.eval_episodes == 0 || self.replay_capacity == 0 {
            return Err(Error::config("batch_size, eval_episodes and replay_capacity must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_fraction) {
            return Err(Error::config("epsilon_fraction must lie in [0, 1]"));
        }
        if !(self.epsilon_end..=1.0).contains(&self.finetune_epsilon_start) {
            return Err(Error::config("finetune_epsilon_start must lie in [epsilon_end, 1]"));
        }
        self.dqn().validate()
    }
}

/// Freeze `f_k` for good once at least `threshold` of the last `window`
/// agent episodes got past stage `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSuccessStop {
    pub window: usize,
    pub threshold: f64,
}

impl Default for StageSuccessStop {
    fn default() -> Self {
        Self {
            window: 50,
            threshold: 0.9,
        }
    }
}

/// Discriminator settings for the reward-learning phase.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscSettings {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Samples per discriminator batch, split evenly between the two sides.
    pub batch_size: usize,
    /// Discriminator gradient steps per agent gradient step.
    pub steps_per_update: usize,
    /// Accuracy-based freezing, undone by failed probes.
    pub early_stop: EarlyStop,
    /// Permanent freezing once the agent reliably clears a stage.
    pub stage_success_stop: Option<StageSuccessStop>,
    /// Env steps between probes of frozen discriminators.
    pub probe_every: u64,
    pub stage_capacity: usize,
    pub alpha: f64,
    pub formula: RewardFormula,
}

impl Default for DiscSettings {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            lr: 3e-4,
            batch_size: 128,
            steps_per_update: 1,
            early_stop: EarlyStop::default(),
            stage_success_stop: Some(StageSuccessStop::default()),
            probe_every: 2000,
            stage_capacity: DEFAULT_STAGE_CAPACITY,
            alpha: DEFAULT_ALPHA,
            formula: RewardFormula::PerStage,
        }
    }
}

/// Settings for the agent-vs-demo baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct GailSettings {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Default for GailSettings {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            lr: 3e-4,
            batch_size: 128,
            lambda: DEFAULT_ALPHA,
        }
    }
}

/// One evaluation of the greedy policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub eval_success_rate: f64,
    pub mean_episode_return: f64,
}

/// Result of greedy rollouts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    /// Mean undiscounted return under the scoring reward, 0 without one.
    pub mean_return: f64,
}

/// Treats success as absorbing: a success transition is worth staying in
/// the success state forever, `r / (1 - γ)`. Without this, terminating on
/// success would make a dense reward that stays positive more valuable to
/// collect than the success itself.
pub struct AbsorbingSuccess<M> {
    pub inner: M,
    pub gamma: f64,
}

impl<M: RewardModel> RewardModel for AbsorbingSuccess<M> {
    fn num_stages(&self) -> usize {
        self.inner.num_stages()
    }

    fn rewards(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let mut r = self.inner.rewards(batch)?;
        for (v, t) in r.iter_mut().zip(batch) {
            if t.success {
                *v /= 1.0 - self.gamma;
            }
        }
        Ok(r)
    }

    fn success_reward(&self) -> f64 {
        self.inner.success_reward() / (1.0 - self.gamma)
    }

    fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        self.inner.check_compatible(spec)
    }

    fn is_frozen(&self) -> bool {
        self.inner.is_frozen()
    }
}

/// Greedy rollouts of `policy` on `episodes` fresh resets.
pub fn evaluate(policy: &DenseNet, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<f64> {
    Ok(evaluate_with(policy, env, episodes, seed, None)?.success_rate)
}

/// [`evaluate`], also scoring episode returns under `reward`.
pub fn evaluate_with(
    policy: &DenseNet,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    reward: Option<&dyn RewardModel>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let spec = env.spec();
    if policy.input_dim() != spec.obs_dim || policy.output_dim() != spec.action_count {
        return Err(Error::compat(format!(
            "policy maps {} -> {}, environment has {} observations and {} actions",
            policy.input_dim(),
            policy.output_dim(),
            spec.obs_dim,
            spec.action_count
        )));
    }
    env.reseed(seed);
    let mut successes = 0;
    let mut total_return = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut steps = Vec::new();
        loop {
            let q = policy.forward(&obs)?;
            let a = (1..q.len()).fold(0, |best, i| if q[i] > q[best] { i } else { best });
            let (t, done) = env.step(a)?;
            obs = t.next_obs.clone();
            steps.push(t);
            if done {
                break;
            }
        }
        if steps.iter().any(|t| t.success) {
            successes += 1;
        }
        if let Some(r) = reward {
            let refs: Vec<&Transition> = steps.iter().collect();
            total_return += r.rewards(&refs)?.iter().sum::<f64>();
        }
    }
    Ok(EvalReport {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
    })
}

/// What a phase changes besides the agent.
trait Learner {
    fn model(&self) -> &dyn RewardModel;

    fn on_episode(&mut self, _traj: Trajectory) {}

    fn update(&mut self, _replay: &ReplayBuffer, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn probe_every(&self) -> Option<u64> {
        None
    }

    fn probe(&mut self, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
}

struct Fixed<'a>(&'a dyn RewardModel);

impl Learner for Fixed<'_> {
    fn model(&self) -> &dyn RewardModel {
        self.0
    }
}

struct DrsLearner {
    reward: LearnedReward,
    buffers: StageBuffers,
    settings: DiscSettings,
    recent: VecDeque<usize>,
    settled: Vec<bool>,
}

impl Learner for DrsLearner {
    fn model(&self) -> &dyn RewardModel {
        &self.reward
    }

    fn on_episode(&mut self, traj: Trajectory) {
        if let Some(stop) = self.settings.stage_success_stop {
            self.recent.push_back(traj.stage_index());
            if self.recent.len() > stop.window {
                self.recent.pop_front();
            }
            if self.recent.len() == stop.window {
                let bank = self.reward.bank_mut();
                for k in 0..bank.num_stages() {
                    let past = self.recent.iter().filter(|&&i| i > k).count();
                    if past as f64 >= stop.threshold * stop.window as f64 {
                        bank.disc_mut(k).freeze();
                        self.settled[k] = true;
                    }
                }
            }
        }
        self.buffers.route(traj);
    }

    fn update(&mut self, _replay: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<()> {
        let bank = self.reward.bank_mut();
        if !bank.all_frozen() {
            train_discriminators(
                bank,
                &self.buffers,
                self.settings.steps_per_update,
                self.settings.batch_size,
                rng,
            )?;
        }
        Ok(())
    }

    fn probe_every(&self) -> Option<u64> {
        Some(self.settings.probe_every)
    }

    fn probe(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let bank = self.reward.bank_mut();
        probe_discriminators(bank, &self.buffers, self.settings.batch_size, rng)?;
        for (k, _) in self.settled.iter().enumerate().filter(|(_, &s)| s) {
            bank.disc_mut(k).freeze();
        }
        Ok(())
    }
}

struct GailLearner {
    reward: GailReward,
    demos: Vec<Transition>,
    batch_size: usize,
}

impl Learner for GailLearner {
    fn model(&self) -> &dyn RewardModel {
        &self.reward
    }

    fn update(&mut self, replay: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<()> {
        use rand::Rng;
        let half = (self.batch_size / 2).max(1);
        let Some(agent) = replay.sample(half, rng) else {
            return Ok(());
        };
        let demos: Vec<&Transition> = (0..half)
            .map(|_| &self.demos[rng.random_range(0..self.demos.len())])
            .collect();
        self.reward.train_step(&demos, &agent)?;
        Ok(())
    }
}

fn check_demos(demos: &[Trajectory], spec: &EnvSpec) -> Result<()> {
    for d in demos {
        if d.stage_index() != spec.num_stages {
            return Err(Error::config("demonstrations must be success trajectories"));
        }
        if d.transitions().iter().any(|t| t.next_obs.len() != spec.obs_dim) {
            return Err(Error::config("demonstration observations do not match the environment"));
        }
    }
    Ok(())
}

fn run_loop(
    task: &Task,
    settings: &TrainSettings,
    agent: &mut QAgent,
    learner: &mut dyn Learner,
    initial_eval: bool,
) -> Result<Vec<CurvePoint>> {
    let seed = settings.seed;
    let mut env = task.build(derive_seed(seed, STREAM_ENV))?;
    let mut eval_env = task.build(derive_seed(seed, STREAM_EVAL))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replay = ReplayBuffer::new(settings.replay_capacity);
    let mut curve = Vec::new();

    let mut eval_point = |agent: &QAgent, learner: &dyn Learner, step: u64| -> Result<CurvePoint> {
        let report = evaluate_with(
            agent.online(),
            eval_env.as_mut(),
            settings.eval_episodes,
            derive_seed(seed ^ step, STREAM_EVAL),
            Some(learner.model()),
        )?;
        Ok(CurvePoint {
            env_steps: step,
            eval_success_rate: report.success_rate,
            mean_episode_return: report.mean_return,
        })
    };

    if initial_eval {
        curve.push(eval_point(agent, learner, 0)?);
    }
    let mut obs: Arc<[f64]> = env.reset();
    let mut episode = Vec::new();
    for step in 1..=settings.total_steps {
        let a = agent.select_action(&obs, step - 1, &mut rng)?;
        let (t, done) = env.step(a)?;
        obs = t.next_obs.clone();
        replay.push(t.clone());
        episode.push(t);
        if done {
            learner.on_episode(Trajectory::new(std::mem::take(&mut episode))?);
            obs = env.reset();
        }
        if step >= settings.warmup_steps && step % settings.train_every == 0 {
            learner.update(&replay, &mut rng)?;
            if let Some(batch) = replay.sample(settings.batch_size, &mut rng) {
                let model = AbsorbingSuccess {
                    inner: learner.model(),
                    gamma: agent.gamma(),
                };
                agent.dqn_update(&batch, &model)?;
            }
        }
        if step % settings.target_sync_every == 0 {
            agent.sync_target();
        }
        if let Some(every) = learner.probe_every() {
            if every > 0 && step % every == 0 {
                learner.probe(&mut rng)?;
            }
        }
        if step % settings.eval_every == 0 || step == settings.total_steps {
            curve.push(eval_point(agent, learner, step)?);
        }
    }
    Ok(curve)
}

/// Products of the reward-learning phase.
#[derive(Clone, Debug)]
pub struct LearnOutcome {
    /// Frozen learned reward.
    pub reward: LearnedReward,
    /// The byproduct policy.
    pub agent: QAgent,
    pub curve: Vec<CurvePoint>,
    /// Trajectories per stage buffer at the end.
    pub buffer_sizes: Vec<usize>,
}

/// Learn a reward on `task` while training an agent on it.
pub fn reward_learning_phase(
    task: &Task,
    settings: &TrainSettings,
    disc: &DiscSettings,
    demos: &[Trajectory],
) -> Result<LearnOutcome> {
    settings.validate()?;
    if let Some(stop) = disc.stage_success_stop {
        if stop.window == 0 || !(stop.threshold > 0.0 && stop.threshold <= 1.0) {
            return Err(Error::config("stage-success stop needs window > 0 and threshold in (0, 1]"));
        }
    }
    let spec = task.spec()?;
    check_demos(demos, &spec)?;
    let bank = DiscriminatorBank::new(
        spec.num_stages,
        spec.obs_dim,
        &disc.hidden,
        disc.lr,
        InputMode::NextState,
        disc.early_stop,
        derive_seed(settings.seed, STREAM_REWARD),
    )?;
    let reward = LearnedReward::with_formula(bank, disc.alpha, disc.formula)?;
    let mut buffers = StageBuffers::new(spec.num_stages, disc.stage_capacity);
    buffers.seed_demos(demos.iter().cloned());
    let mut agent = QAgent::new(
        spec.obs_dim,
        spec.action_count,
        &settings.dqn(),
        derive_seed(settings.seed, STREAM_AGENT),
    )?;
    let mut learner = DrsLearner {
        reward,
        buffers,
        settings: disc.clone(),
        recent: VecDeque::new(),
        settled: vec![false; spec.num_stages],
    };
    let curve = run_loop(task, settings, &mut agent, &mut learner, false)?;
    let DrsLearner { mut reward, buffers, .. } = learner;
    reward.bank_mut().freeze_all();
    Ok(LearnOutcome {
        reward,
        agent,
        curve,
        buffer_sizes: buffers.sizes(),
    })
}

/// Products of the agent-vs-demo baseline's learning phase.
#[derive(Clone, Debug)]
pub struct GailOutcome {
    pub reward: GailReward,
    pub agent: QAgent,
    pub curve: Vec<CurvePoint>,
}

/// Train an agent-vs-demo discriminator alongside an agent rewarded by the
/// semi-sparse reward plus the discriminator's squashed logit.
pub fn gail_learning_phase(
    task: &Task,
    settings: &TrainSettings,
    gail: &GailSettings,
    demos: &[Trajectory],
) -> Result<GailOutcome> {
    settings.validate()?;
    let spec = task.spec()?;
    check_demos(demos, &spec)?;
    if demos.is_empty() {
        return Err(Error::config("the agent-vs-demo baseline needs demonstrations"));
    }
    let reward = GailReward::new(
        spec.obs_dim,
        &gail.hidden,
        gail.lr,
        gail.lambda,
        spec.num_stages,
        derive_seed(settings.seed, STREAM_REWARD),
    )?;
    let mut agent = QAgent::new(
        spec.obs_dim,
        spec.action_count,
        &settings.dqn(),
        derive_seed(settings.seed, STREAM_AGENT),
    )?;
    let mut learner = GailLearner {
        reward,
        demos: demos.iter().flat_map(|d| d.transitions().iter().cloned()).collect(),
        batch_size: gail.batch_size,
    };
    let curve = run_loop(task, settings, &mut agent, &mut learner, false)?;
    let mut reward = learner.reward;
    reward.freeze();
    Ok(GailOutcome { reward, agent, curve })
}

/// Products of a phase that only trains an agent.
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub agent: QAgent,
    pub curve: Vec<CurvePoint>,
}

/// Train a fresh agent on `task` with a frozen reward.
pub fn reward_reuse_phase(task: &Task, reward: &dyn RewardModel, settings: &TrainSettings) -> Result<PhaseOutcome> {
    settings.validate()?;
    let spec = task.spec()?;
    reward.check_compatible(&spec)?;
    if !reward.is_frozen() {
        return Err(Error::usage("reward reuse needs a frozen reward"));
    }
    let mut agent = QAgent::new(
        spec.obs_dim,
        spec.action_count,
        &settings.dqn(),
        derive_seed(settings.seed, STREAM_AGENT),
    )?;
    let curve = run_loop(task, settings, &mut agent, &mut Fixed(reward), false)?;
    Ok(PhaseOutcome { agent, curve })
}

/// Continue training `policy` on `task` under `reward`. The curve starts
/// with the policy's transfer performance at step 0.
pub fn finetune_policy(
    task: &Task,
    policy: &DenseNet,
    reward: &dyn RewardModel,
    settings: &TrainSettings,
) -> Result<PhaseOutcome> {
    settings.validate()?;
    let spec = task.spec()?;
    if policy.input_dim() != spec.obs_dim || policy.output_dim() != spec.action_count {
        return Err(Error::compat(format!(
            "policy maps {} -> {}, environment has {} observations and {} actions",
            policy.input_dim(),
            policy.output_dim(),
            spec.obs_dim,
            spec.action_count
        )));
    }
    reward.check_compatible(&spec)?;
    if !reward.is_frozen() {
        return Err(Error::usage("fine-tuning needs a frozen reward"));
    }
    let settings = &TrainSettings {
        epsilon_start: settings.finetune_epsilon_start,
        ..settings.clone()
    };
    let dqn = settings.dqn();
    if policy.activation() != dqn.activation {
        return Err(Error::compat("policy activation differs from the configured agent"));
    }
    let mut agent = QAgent::from_net(policy.clone(), &dqn)?;
    let curve = run_loop(task, settings, &mut agent, &mut Fixed(reward), true)?;
    Ok(PhaseOutcome { agent, curve })
}

/// Expert demonstrations for `task`, seeded from the run seed.
pub fn task_demos(task: &Task, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut env = task.build(derive_seed(seed, STREAM_DEMOS))?;
    crate::grid::gen_demos(env.as_mut(), count, derive_seed(seed, STREAM_DEMOS))
}

/// First evaluation step whose success rate reaches `level`.
pub fn steps_to_reach(curve: &[CurvePoint], level: f64) -> Option<u64> {
    curve.iter().find(|p| p.eval_success_rate >= level).map(|p| p.env_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_nav_env, MapVariant};
    use crate::reward::{DiscStatus, SparseReward};

    fn nav() -> Task {
        EnvId::Nav(MapVariant::Train).into()
    }

    fn quick(total: u64) -> TrainSettings {
        TrainSettings {
            total_steps: total,
            warmup_steps: 200,
            eval_every: 1000,
            eval_episodes: 5,
            hidden: vec![16],
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_leave_bank_untouched() {
        let task = nav();
        let spec = task.spec().unwrap();
        let disc = DiscSettings::default();
        let settings = quick(0);
        let fresh = DiscriminatorBank::new(
            1,
            spec.obs_dim,
            &disc.hidden,
            disc.lr,
            InputMode::NextState,
            disc.early_stop,
            derive_seed(settings.seed, STREAM_REWARD),
        )
        .unwrap();
        let out = reward_learning_phase(&task, &settings, &disc, &[]).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.reward.bank().fingerprint(), fresh.fingerprint());
        assert!(out.reward.bank().all_frozen());
    }

    fn drs_learner(stop: Option<StageSuccessStop>) -> DrsLearner {
        let spec = nav().spec().unwrap();
        let disc = DiscSettings {
            stage_success_stop: stop,
            ..DiscSettings::default()
        };
        let bank = DiscriminatorBank::new(
            spec.num_stages,
            spec.obs_dim,
            &disc.hidden,
            disc.lr,
            InputMode::NextState,
            disc.early_stop,
            3,
        )
        .unwrap();
        DrsLearner {
            reward: LearnedReward::new(bank, disc.alpha).unwrap(),
            buffers: StageBuffers::new(spec.num_stages, disc.stage_capacity),
            settings: disc,
            recent: VecDeque::new(),
            settled: vec![false; spec.num_stages],
        }
    }

    fn feed(learner: &mut DrsLearner, successes: usize) {
        let demos = task_demos(&nav(), successes, 2).unwrap();
        let mut failed = demos[0].transitions().to_vec();
        failed.pop();
        learner.on_episode(Trajectory::new(failed).unwrap());
        for d in demos {
            learner.on_episode(d);
        }
    }

    #[test]
    fn stage_success_stop_freezes_and_survives_probes() {
        let stop = StageSuccessStop { window: 10, threshold: 0.9 };
        let mut learner = drs_learner(Some(stop));
        feed(&mut learner, 8);
        assert_eq!(learner.reward.bank().status(0), DiscStatus::Active);
        feed(&mut learner, 9);
        assert_eq!(learner.reward.bank().status(0), DiscStatus::Frozen);
        assert_eq!(learner.settled, vec![true]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            learner.probe(&mut rng).unwrap();
            assert_eq!(learner.reward.bank().status(0), DiscStatus::Frozen);
        }
    }

    #[test]
    fn probes_unfreeze_without_the_success_rule() {
        let mut learner = drs_learner(None);
        feed(&mut learner, 60);
        assert_eq!(learner.reward.bank().status(0), DiscStatus::Active);
        learner.reward.bank_mut().disc_mut(0).freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        learner.probe(&mut rng).unwrap();
        assert_eq!(learner.reward.bank().status(0), DiscStatus::Active, "an untrained net fails the probe");
    }

    #[test]
    fn demos_must_be_successes() {
        let task = nav();
        let demos = task_demos(&task, 3, 0).unwrap();
        let mut failed = demos[0].transitions().to_vec();
        failed.pop();
        let bad = Trajectory::new(failed).unwrap();
        let err = reward_learning_phase(&task, &quick(10), &DiscSettings::default(), &[bad]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn learning_phase_is_deterministic() {
        let task = nav();
        let demos = task_demos(&task, 5, 1).unwrap();
        let a = reward_learning_phase(&task, &quick(3000), &DiscSettings::default(), &demos).unwrap();
        let b = reward_learning_phase(&task, &quick(3000), &DiscSettings::default(), &demos).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.reward.bank().fingerprint(), b.reward.bank().fingerprint());
        assert_eq!(a.agent.online(), b.agent.online());
        let steps: Vec<u64> = a.curve.iter().map(|p| p.env_steps).collect();
        assert_eq!(steps, vec![1000, 2000, 3000]);
        assert!(a.curve.iter().all(|p| (0.0..=1.0).contains(&p.eval_success_rate)));
        assert!(a.buffer_sizes[1] >= 5);
    }

    #[test]
    fn reuse_keeps_bank_fixed_and_checks_specs() {
        let task = nav();
        let demos = task_demos(&task, 5, 1).unwrap();
        let learned = reward_learning_phase(&task, &quick(1500), &DiscSettings::default(), &demos).unwrap();
        let before = learned.reward.bank().fingerprint();
        let test: Task = EnvId::Nav(MapVariant::Test).into();
        let out = reward_reuse_phase(&test, &learned.reward, &quick(1500)).unwrap();
        assert_eq!(learned.reward.bank().fingerprint(), before);
        assert_eq!(out.curve.len(), 2);

        let keydoor: Task = EnvId::KeyDoor(MapVariant::Test).into();
        let err = reward_reuse_phase(&keydoor, &learned.reward, &quick(10)).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
        let err = finetune_policy(&keydoor, learned.agent.online(), &SparseReward { num_stages: 3 }, &quick(10))
            .unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
    }

    #[test]
    fn finetune_zero_steps_reports_transfer() {
        let task = nav();
        let agent = QAgent::new(13, 5, &quick(0).dqn(), 3).unwrap();
        let settings = quick(0);
        let out = finetune_policy(&task, agent.online(), &SparseReward { num_stages: 1 }, &settings).unwrap();
        assert_eq!(out.curve.len(), 1);
        let mut env = task.build(derive_seed(settings.seed, STREAM_EVAL)).unwrap();
        let direct = evaluate(
            agent.online(),
            env.as_mut(),
            settings.eval_episodes,
            derive_seed(settings.seed, STREAM_EVAL),
        )
        .unwrap();
        assert_eq!(out.curve[0].eval_success_rate, direct);
        assert_eq!(out.agent.online(), agent.online());
    }

    #[test]
    fn evaluation_bounds() {
        let mut env = make_nav_env(MapVariant::Train, 0).unwrap();
        let random = QAgent::new(13, 5, &quick(0).dqn(), 1).unwrap();
        assert!(evaluate(random.online(), &mut env, 0, 0).is_err());
        let rate = evaluate(random.online(), &mut env, 100, 0).unwrap();
        assert!(rate < 0.2, "{rate}");
    }

    #[test]
    fn absorbing_success_scales_success_only() {
        let task = nav();
        let demo = &task_demos(&task, 1, 0).unwrap()[0];
        let steps = demo.transitions();
        let refs: Vec<&Transition> = steps.iter().collect();
        let model = AbsorbingSuccess {
            inner: SparseReward { num_stages: 1 },
            gamma: 0.95,
        };
        let r = model.rewards(&refs).unwrap();
        assert!(r[..r.len() - 1].iter().all(|&v| v == 0.0));
        assert!((r[r.len() - 1] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..5)
            .flat_map(|s| (1..=5).map(move |k| derive_seed(s, k)))
            .collect();
        assert_eq!(seeds.len(), 25);
    }
}
