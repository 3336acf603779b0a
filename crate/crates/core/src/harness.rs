//! Experiment configuration, per-run output directories and file exports.
//!
//! A run is described by one TOML file. Every configured seed gets its own
//! directory `<root>/<name>-seed<seed>/` holding `manifest.toml` (the
//! effective config for that seed), `curve.csv` and any checkpoints. The
//! root defaults to `runs` and can be moved with `DRS_OUTPUT_ROOT`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::load_policy;
use crate::env::{EnvSpec, StageVector, Transition};
use crate::error::{Error, Result};
use crate::grid::{EnvId, GridMap, MapVariant, NavEnv, Pos, Action};
use crate::pipeline::{
    evaluate, finetune_policy, gail_learning_phase, reward_learning_phase, reward_reuse_phase, task_demos, CurvePoint,
    DiscSettings, GailSettings, StageSuccessStop, Task, TrainSettings,
};
use crate::reward::{
    EarlyStop, GailReward, LearnedReward, RewardFormula, RewardModel, SemiSparseReward, SparseReward, DEFAULT_ALPHA,
};
use crate::tabular::{emulate_converged_buffers, train_tabular_discriminator, verify_greedy_optimality, TabularMDP};
use crate::weights::WeightFile;

pub const OUTPUT_ROOT_VAR: &str = "DRS_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const CURVE_HEADER: &str = "env_steps,eval_success_rate,mean_episode_return";
pub const HEATMAP_HEADER: &str = "x,y,r_up,r_down,r_left,r_right,r_stay,goal_x,goal_y";
pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const REWARD_FILE: &str = "reward_bank.drsw";
pub const POLICY_FILE: &str = "policy.drsw";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LearnReward,
    ReuseReward,
    Finetune,
    TabularVerify,
    GenDemos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardChoice {
    Drs,
    Gail,
    Sparse,
    SemiSparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub phase: Phase,
    /// Environment id, or for `tabular_verify` a map: an environment id or
    /// `empty-<w>x<h>`.
    pub env: String,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub reward: RewardChoice,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// 1-based stage groups, e.g. `[[1, 2], [3]]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<Vec<Vec<usize>>>,
    /// `{seed}` is replaced by the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_checkpoint: Option<String>,
    #[serde(default = "default_demos")]
    pub demos: usize,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub discriminator: DiscConfig,
    #[serde(default)]
    pub gail: GailConfig,
    #[serde(default)]
    pub tabular: TabularConfig,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_demos() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub warmup_steps: u64,
    pub train_every: u64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub finetune_epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_fraction: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            warmup_steps: t.warmup_steps,
            train_every: t.train_every,
            batch_size: t.batch_size,
            target_sync_every: t.target_sync_every,
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
            replay_capacity: t.replay_capacity,
            epsilon_start: t.epsilon_start,
            finetune_epsilon_start: t.finetune_epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_fraction: t.epsilon_fraction,
            hidden: t.hidden,
            lr: t.lr,
            gamma: t.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopConfig {
    pub window: usize,
    pub freeze_accuracy: f64,
    pub unfreeze_accuracy: f64,
    /// Episodes in the stage-success window; 0 turns that rule off.
    pub success_window: usize,
    pub success_threshold: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        let e = EarlyStop::default();
        let s = StageSuccessStop::default();
        Self {
            window: e.window,
            freeze_accuracy: e.freeze_accuracy,
            unfreeze_accuracy: e.unfreeze_accuracy,
            success_window: s.window,
            success_threshold: s.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub steps_per_update: usize,
    pub probe_every: u64,
    pub stage_capacity: usize,
    /// `per-stage` or `sum-over-stages`.
    pub formula: String,
    pub early_stop: EarlyStopConfig,
}

impl Default for DiscConfig {
    fn default() -> Self {
        let d = DiscSettings::default();
        Self {
            hidden: d.hidden,
            lr: d.lr,
            batch_size: d.batch_size,
            steps_per_update: d.steps_per_update,
            probe_every: d.probe_every,
            stage_capacity: d.stage_capacity,
            formula: d.formula.name().to_string(),
            early_stop: EarlyStopConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GailConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Default for GailConfig {
    fn default() -> Self {
        let g = GailSettings::default();
        Self {
            hidden: g.hidden,
            lr: g.lr,
            batch_size: g.batch_size,
            lambda: g.lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    /// Defaults to the far corner of an empty map or the top-room centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<[usize; 2]>,
    pub n_success: usize,
    pub n_fail: usize,
    pub steps: usize,
    pub lr: f64,
    pub gamma: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            goal: None,
            n_success: 2000,
            n_fail: 2000,
            steps: 2000,
            lr: 0.05,
            gamma: 0.95,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("run name {:?} must be a plain file name", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        self.formula()?;
        if self.phase == Phase::TabularVerify {
            self.tabular_mdp()?;
            return Ok(());
        }
        let task = self.task()?;
        let spec = task.spec()?;
        self.settings(self.seeds[0]).validate()?;
        match (self.phase, self.reward) {
            (Phase::LearnReward, RewardChoice::Sparse | RewardChoice::SemiSparse) => {
                return Err(Error::config("learn_reward needs reward = \"drs\" or \"gail\""));
            }
            (Phase::ReuseReward | Phase::Finetune, RewardChoice::Drs | RewardChoice::Gail)
                if self.reward_checkpoint.is_none() =>
            {
                return Err(Error::config("a learned reward needs reward_checkpoint"));
            }
            (Phase::Finetune, _) if self.policy_checkpoint.is_none() => {
                return Err(Error::config("finetune needs policy_checkpoint"));
            }
            _ => {}
        }
        if self.phase == Phase::LearnReward && self.reward == RewardChoice::Drs {
            crate::reward::DiscriminatorBank::new(
                spec.num_stages,
                spec.obs_dim,
                &self.discriminator.hidden,
                self.discriminator.lr,
                crate::reward::InputMode::NextState,
                self.disc_settings()?.early_stop,
                0,
            )?;
            if !(self.alpha > 0.0 && self.alpha < 0.5) {
                return Err(Error::config(format!("alpha must lie in (0, 1/2), got {}", self.alpha)));
            }
            if self.discriminator.batch_size < 2 {
                return Err(Error::config("discriminator batch_size must be at least 2"));
            }
        }
        Ok(())
    }

    fn formula(&self) -> Result<RewardFormula> {
        RewardFormula::parse(&self.discriminator.formula)
            .ok_or_else(|| Error::config(format!("unknown reward formula {:?}", self.discriminator.formula)))
    }

    pub fn task(&self) -> Result<Task> {
        Ok(Task {
            env: self.env.parse()?,
            merge: self.merge.clone(),
        })
    }

    pub fn settings(&self, seed: u64) -> TrainSettings {
        let d = &self.dqn;
        TrainSettings {
            total_steps: self.total_steps,
            seed,
            warmup_steps: d.warmup_steps,
            train_every: d.train_every,
            batch_size: d.batch_size,
            target_sync_every: d.target_sync_every,
            eval_every: d.eval_every,
            eval_episodes: d.eval_episodes,
            replay_capacity: d.replay_capacity,
            epsilon_start: d.epsilon_start,
            finetune_epsilon_start: d.finetune_epsilon_start,
            epsilon_end: d.epsilon_end,
            epsilon_fraction: d.epsilon_fraction,
            hidden: d.hidden.clone(),
            lr: d.lr,
            gamma: d.gamma,
        }
    }

    pub fn disc_settings(&self) -> Result<DiscSettings> {
        let d = &self.discriminator;
        let e = &d.early_stop;
        if e.window == 0 || !(e.unfreeze_accuracy <= e.freeze_accuracy) {
            return Err(Error::config(
                "early_stop needs window > 0 and unfreeze_accuracy <= freeze_accuracy",
            ));
        }
        if e.success_window > 0 && !(e.success_threshold > 0.0 && e.success_threshold <= 1.0) {
            return Err(Error::config("early_stop.success_threshold must lie in (0, 1]"));
        }
        Ok(DiscSettings {
            hidden: d.hidden.clone(),
            lr: d.lr,
            batch_size: d.batch_size,
            steps_per_update: d.steps_per_update,
            early_stop: EarlyStop {
                window: e.window,
                freeze_accuracy: e.freeze_accuracy,
                unfreeze_accuracy: e.unfreeze_accuracy,
            },
            stage_success_stop: (e.success_window > 0).then_some(StageSuccessStop {
                window: e.success_window,
                threshold: e.success_threshold,
            }),
            probe_every: d.probe_every,
            stage_capacity: d.stage_capacity,
            alpha: self.alpha,
            formula: self.formula()?,
        })
    }

    pub fn gail_settings(&self) -> GailSettings {
        GailSettings {
            hidden: self.gail.hidden.clone(),
            lr: self.gail.lr,
            batch_size: self.gail.batch_size,
            lambda: self.gail.lambda,
        }
    }

    /// The map and goal named by a `tabular_verify` config.
    pub fn tabular_mdp(&self) -> Result<TabularMDP> {
        let map = parse_map(&self.env)?;
        let goal = match self.tabular.goal {
            Some([x, y]) => Pos::new(x, y),
            None => default_goal(&map),
        };
        if goal.x >= map.width() || goal.y >= map.height() {
            return Err(Error::config(format!("goal {goal:?} lies outside the map")));
        }
        TabularMDP::new(map, goal, self.tabular.gamma)
    }

    /// This config narrowed to one seed, as echoed into a run manifest.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

/// `empty-<w>x<h>` or a three-room environment id.
pub fn parse_map(s: &str) -> Result<GridMap> {
    if let Some(dims) = s.strip_prefix("empty-") {
        let bad = || Error::config(format!("bad map size {dims:?}"));
        let (w, h) = dims.split_once('x').ok_or_else(bad)?;
        let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
        if w == 0 || h == 0 {
            return Err(bad());
        }
        return Ok(GridMap::empty(w, h));
    }
    let (lower, upper) = nav_variant(s.parse()?).gates();
    GridMap::three_rooms(lower, upper)
}

fn nav_variant(id: EnvId) -> MapVariant {
    match id {
        EnvId::Nav(v) | EnvId::KeyDoor(v) => v,
    }
}

fn default_goal(map: &GridMap) -> Pos {
    let centre = Pos::new(map.width() / 2, map.height() - 3);
    if map.height() == map.width() && map.is_free(centre) && map.height() > 8 {
        centre
    } else {
        Pos::new(map.width() - 1, map.height() - 1)
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn run_dir(root: &Path, name: &str, seed: u64) -> PathBuf {
    root.join(format!("{name}-seed{seed}"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.env_steps, p.eval_success_rate, p.mean_episode_return);
    }
    out
}

/// What one seed of a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    /// Last eval success rate, or whether the greedy check held for tabular
    /// runs (1 or 0). `None` for runs without evaluations.
    pub score: Option<f64>,
}

/// Run every seed of `cfg` under `root`.
pub fn execute(cfg: &RunConfig, root: &Path) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    cfg.seeds.iter().map(|&seed| execute_seed(cfg, root, seed)).collect()
}

fn checkpoint_path(template: &Option<String>, seed: u64) -> Result<PathBuf> {
    let t = template
        .as_deref()
        .ok_or_else(|| Error::config("missing checkpoint path"))?;
    Ok(PathBuf::from(t.replace("{seed}", &seed.to_string())))
}

fn fixed_reward(cfg: &RunConfig, spec: &EnvSpec, seed: u64) -> Result<Box<dyn RewardModel>> {
    Ok(match cfg.reward {
        RewardChoice::Sparse => Box::new(SparseReward {
            num_stages: spec.num_stages,
        }),
        RewardChoice::SemiSparse => Box::new(SemiSparseReward {
            num_stages: spec.num_stages,
        }),
        RewardChoice::Drs | RewardChoice::Gail => load_reward(checkpoint_path(&cfg.reward_checkpoint, seed)?)?,
    })
}

/// A learned reward of either kind, detected from the weight file.
pub fn load_reward(path: impl AsRef<Path>) -> Result<Box<dyn RewardModel>> {
    let file = WeightFile::load(path)?;
    match file.meta_value("kind")? {
        "gail" => Ok(Box::new(GailReward::from_weight_file(file)?)),
        _ => Ok(Box::new(LearnedReward::from_weight_file(file)?)),
    }
}

fn execute_seed(cfg: &RunConfig, root: &Path, seed: u64) -> Result<RunSummary> {
    let dir = run_dir(root, &cfg.name, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join(MANIFEST_FILE), &cfg.for_seed(seed).to_toml()?)?;
    let settings = cfg.settings(seed);
    let mut score = None;
    let mut save_curve = |curve: &[CurvePoint]| -> Result<()> {
        score = curve.last().map(|p| p.eval_success_rate);
        write(&dir.join(CURVE_FILE), &curve_csv(curve))
    };
    match cfg.phase {
        Phase::LearnReward => {
            let task = cfg.task()?;
            let demos = task_demos(&task, cfg.demos, seed)?;
            if cfg.reward == RewardChoice::Gail {
                let out = gail_learning_phase(&task, &settings, &cfg.gail_settings(), &demos)?;
                save_curve(&out.curve)?;
                out.reward.save(dir.join(REWARD_FILE))?;
                out.agent.save_policy(dir.join(POLICY_FILE))?;
            } else {
                let out = reward_learning_phase(&task, &settings, &cfg.disc_settings()?, &demos)?;
                save_curve(&out.curve)?;
                out.reward.save(dir.join(REWARD_FILE))?;
                out.agent.save_policy(dir.join(POLICY_FILE))?;
            }
        }
        Phase::ReuseReward => {
            let task = cfg.task()?;
            let reward = fixed_reward(cfg, &task.spec()?, seed)?;
            let out = reward_reuse_phase(&task, reward.as_ref(), &settings)?;
            save_curve(&out.curve)?;
            out.agent.save_policy(dir.join(POLICY_FILE))?;
        }
        Phase::Finetune => {
            let task = cfg.task()?;
            let reward = fixed_reward(cfg, &task.spec()?, seed)?;
            let policy = load_policy(checkpoint_path(&cfg.policy_checkpoint, seed)?)?;
            let out = finetune_policy(&task, &policy, reward.as_ref(), &settings)?;
            save_curve(&out.curve)?;
            out.agent.save_policy(dir.join(POLICY_FILE))?;
        }
        Phase::GenDemos => {
            let demos = task_demos(&cfg.task()?, cfg.demos, seed)?;
            let mut out = String::from("episode,step,action,stage_index,success,obs,next_obs\n");
            for (i, d) in demos.iter().enumerate() {
                for (j, t) in d.transitions().iter().enumerate() {
                    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
                    let _ = writeln!(
                        out,
                        "{i},{j},{},{},{},{},{}",
                        t.action,
                        t.next_stage_index(),
                        t.success,
                        join(&t.obs),
                        join(&t.next_obs)
                    );
                }
            }
            write(&dir.join("demos.csv"), &out)?;
        }
        Phase::TabularVerify => {
            let mdp = cfg.tabular_mdp()?;
            let t = &cfg.tabular;
            let buffers = emulate_converged_buffers(&mdp, t.n_success, t.n_fail, seed);
            let reward = train_tabular_discriminator(&mdp, &buffers, t.steps, t.lr)?;
            let report = verify_greedy_optimality(&reward, &mdp);
            let mut text = format!(
                "holds = {}\nstates_checked = {}\ncounterexamples = {}\n",
                report.holds,
                report.states_checked,
                report.counterexamples.len()
            );
            for c in &report.counterexamples {
                let _ = writeln!(text, "# {c:?}");
            }
            write(&dir.join("tabular_report.txt"), &text)?;
            score = Some(if report.holds { 1.0 } else { 0.0 });
        }
    }
    Ok(RunSummary { seed, dir, score })
}

/// Reward of every action from every free cell of a navigation map, for a
/// fixed goal. Rows follow the map's cell order.
pub fn heatmap_csv(reward: &dyn RewardModel, env: EnvId, goal: Option<Pos>) -> Result<String> {
    let EnvId::Nav(variant) = env else {
        return Err(Error::config("heatmaps are defined for navigation maps only"));
    };
    let (lower, upper) = variant.gates();
    let map = GridMap::three_rooms(lower, upper)?;
    let goal = goal.unwrap_or_else(|| default_goal(&map));
    if goal.x >= map.width() || goal.y >= map.height() || !map.is_free(goal) {
        return Err(Error::config(format!("goal {goal:?} is not a free cell")));
    }
    reward.check_compatible(&env.spec()?)?;
    let cells = map.free_cells();
    let mut transitions = Vec::with_capacity(cells.len() * Action::ALL.len());
    for &p in &cells {
        let obs: Arc<[f64]> = NavEnv::observation_at(&map, p, goal).into();
        for a in Action::ALL {
            let next = map.step_from(p, a);
            let success = next == goal;
            transitions.push(Transition {
                obs: obs.clone(),
                action: a.index(),
                next_obs: NavEnv::observation_at(&map, next, goal).into(),
                next_stages: StageVector::new(vec![success]),
                success,
                terminal: success,
            });
        }
    }
    let rewards = reward.rewards(&transitions.iter().collect::<Vec<_>>())?;
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for (p, r) in cells.iter().zip(rewards.chunks_exact(Action::ALL.len())) {
        let _ = write!(out, "{},{}", p.x, p.y);
        for v in r {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", goal.x, goal.y);
    }
    Ok(out)
}

pub fn export_heatmap(reward_ckpt: &Path, env: EnvId, out_path: &Path, goal: Option<Pos>) -> Result<usize> {
    let reward = load_reward(reward_ckpt)?;
    let csv = heatmap_csv(reward.as_ref(), env, goal)?;
    write(out_path, &csv)?;
    Ok(csv.lines().count() - 1)
}

/// Greedy success rate of a saved policy.
pub fn eval_checkpoint(policy_ckpt: &Path, env: EnvId, episodes: usize, seed: u64) -> Result<f64> {
    let policy = load_policy(policy_ckpt)?;
    let mut e = env.build(seed)?;
    let spec = e.spec();
    if policy.input_dim() != spec.obs_dim || policy.output_dim() != spec.action_count {
        return Err(Error::compat(format!(
            "policy maps {} -> {}, {env} has {} observations and {} actions",
            policy.input_dim(),
            policy.output_dim(),
            spec.obs_dim,
            spec.action_count
        )));
    }
    evaluate(&policy, e.as_mut(), episodes, seed)
}

/// Process exit code for an error: 2 configuration, 3 compatibility,
/// 4 I/O or unreadable file, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Compatibility(_) | Error::Shape { .. } => 3,
        Error::Io { .. } | Error::Format(_) => 4,
        Error::NoPath { .. } => 1,
    }
}
