use std::collections::VecDeque;

use rand::Rng;

use crate::buffers::{Sample, StageBuffers};
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, train_step_with, Activation, Adam, DenseNet};

/// What a discriminator looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    /// The next observation `s'` only.
    NextState,
    /// The current observation followed by a one-hot action.
    StateAction { action_count: usize },
}

impl InputMode {
    pub fn input_dim(self, obs_dim: usize) -> usize {
        match self {
            InputMode::NextState => obs_dim,
            InputMode::StateAction { action_count } => obs_dim + action_count,
        }
    }

    pub(crate) fn extend_features(self, t: &Transition, out: &mut Vec<f64>) {
        match self {
            InputMode::NextState => out.extend_from_slice(&t.next_obs),
            InputMode::StateAction { action_count } => {
                out.extend_from_slice(&t.obs);
                out.extend((0..action_count).map(|a| if a == t.action { 1.0 } else { 0.0 }));
            }
        }
    }

    pub(crate) fn features<'a>(self, batch: impl IntoIterator<Item = &'a Transition>) -> Vec<f64> {
        let mut out = Vec::new();
        for t in batch {
            self.extend_features(t, &mut out);
        }
        out
    }
}

/// Accuracy-based freezing of discriminators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    /// Number of recent training batches averaged.
    pub window: usize,
    /// Freeze once the windowed accuracy reaches this.
    pub freeze_accuracy: f64,
    /// A frozen net whose probe accuracy drops below this resumes training.
    pub unfreeze_accuracy: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 50,
            freeze_accuracy: 0.98,
            unfreeze_accuracy: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscStatus {
    Active,
    Frozen,
}

/// One stage's classifier `f_k` with its optimizer and early-stop state.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub net: DenseNet,
    adam: Adam,
    status: DiscStatus,
    accuracies: VecDeque<f64>,
}

impl Discriminator {
    fn new(net: DenseNet, lr: f64) -> Self {
        let adam = Adam::for_net(&net, lr);
        Self {
            net,
            adam,
            status: DiscStatus::Active,
            accuracies: VecDeque::new(),
        }
    }

    pub fn status(&self) -> DiscStatus {
        self.status
    }

    pub fn freeze(&mut self) {
        self.status = DiscStatus::Frozen;
    }

    /// Windowed training accuracy, when the window has any entries.
    pub fn recent_accuracy(&self) -> Option<f64> {
        (!self.accuracies.is_empty()).then(|| self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64)
    }

    /// One BCE step on positives (label 1) and negatives (label 0). Returns
    /// the pre-update loss and batch accuracy.
    pub fn train_on(&mut self, positives: &[f64], negatives: &[f64]) -> Result<(f64, f64)> {
        if self.status == DiscStatus::Frozen {
            return Err(Error::usage("frozen discriminators cannot be trained"));
        }
        let dim = self.net.input_dim();
        let (n_pos, n_neg) = (positives.len() / dim, negatives.len() / dim);
        let mut inputs = Vec::with_capacity(positives.len() + negatives.len());
        inputs.extend_from_slice(positives);
        inputs.extend_from_slice(negatives);
        let mut labels = vec![1.0; n_pos];
        labels.resize(n_pos + n_neg, 0.0);
        let mut accuracy = 0.0;
        let loss = train_step_with(&mut self.net, &mut self.adam, &inputs, |logits| {
            let correct = logits
                .iter()
                .zip(&labels)
                .filter(|(&z, &y)| (z > 0.0) == (y == 1.0))
                .count();
            accuracy = correct as f64 / logits.len() as f64;
            bce_with_logits(logits, &labels)
        })?;
        Ok((loss, accuracy))
    }

    fn record_accuracy(&mut self, accuracy: f64, rule: &EarlyStop) {
        self.accuracies.push_back(accuracy);
        while self.accuracies.len() > rule.window {
            self.accuracies.pop_front();
        }
        if self.accuracies.len() == rule.window
            && self.recent_accuracy().is_some_and(|a| a >= rule.freeze_accuracy)
        {
            self.status = DiscStatus::Frozen;
        }
    }
}

/// The per-stage discriminators `f_0..f_{N-1}`.
#[derive(Clone, Debug)]
pub struct DiscriminatorBank {
    discs: Vec<Discriminator>,
    input_mode: InputMode,
    pub early_stop: EarlyStop,
}

impl DiscriminatorBank {
    /// `N` nets of shape `[input_dim, hidden.., 1]` with tanh hidden units.
    pub fn new(
        num_stages: usize,
        obs_dim: usize,
        hidden: &[usize],
        lr: f64,
        input_mode: InputMode,
        early_stop: EarlyStop,
        seed: u64,
    ) -> Result<Self> {
        if num_stages == 0 {
            return Err(Error::config("a discriminator bank needs at least one stage"));
        }
        let mut sizes = vec![input_mode.input_dim(obs_dim)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let discs = (0..num_stages)
            .map(|k| {
                let net = DenseNet::new(&sizes, Activation::Tanh, seed.wrapping_add(k as u64))?;
                Ok(Discriminator::new(net, lr))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            discs,
            input_mode,
            early_stop,
        })
    }

    /// Rebuild a bank around already-trained nets; every net starts frozen.
    pub fn from_nets(nets: Vec<DenseNet>, input_mode: InputMode) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::format("a discriminator bank needs at least one net"));
        }
        let dim = nets[0].input_dim();
        if nets.iter().any(|n| n.input_dim() != dim || n.output_dim() != 1) {
            return Err(Error::format("discriminator nets must share one input size and emit one logit"));
        }
        let discs = nets
            .into_iter()
            .map(|net| {
                let mut d = Discriminator::new(net, Adam::DEFAULT_LR);
                d.status = DiscStatus::Frozen;
                d
            })
            .collect();
        Ok(Self {
            discs,
            input_mode,
            early_stop: EarlyStop::default(),
        })
    }

    pub fn num_stages(&self) -> usize {
        self.discs.len()
    }

    pub fn input_mode(&self) -> InputMode {
        self.input_mode
    }

    pub fn input_dim(&self) -> usize {
        self.discs[0].net.input_dim()
    }

    pub fn disc(&self, k: usize) -> &Discriminator {
        &self.discs[k]
    }

    pub fn disc_mut(&mut self, k: usize) -> &mut Discriminator {
        &mut self.discs[k]
    }

    pub fn nets(&self) -> impl Iterator<Item = &DenseNet> {
        self.discs.iter().map(|d| &d.net)
    }

    pub fn status(&self, k: usize) -> DiscStatus {
        self.discs[k].status
    }

    pub fn all_frozen(&self) -> bool {
        self.discs.iter().all(|d| d.status == DiscStatus::Frozen)
    }

    pub fn freeze_all(&mut self) {
        for d in &mut self.discs {
            d.status = DiscStatus::Frozen;
        }
    }

    /// Raw logits of `f_k` over flat feature rows.
    pub fn logits(&self, k: usize, features: &[f64]) -> Result<Vec<f64>> {
        self.discs[k].net.forward_batch(features)
    }

    /// Digest over every net's parameters.
    pub fn fingerprint(&self) -> u64 {
        self.discs
            .iter()
            .fold(0u64, |acc, d| acc.rotate_left(17) ^ d.net.fingerprint())
    }
}

/// Outcome of one [`train_discriminators`] call for stage `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    /// Mean loss over the performed steps; `None` when skipped.
    pub loss: Option<f64>,
    /// Mean batch accuracy over the performed steps; `None` when skipped.
    pub accuracy: Option<f64>,
    pub frozen: bool,
}

fn side_features(mode: InputMode, side: &[Sample<'_>]) -> Vec<f64> {
    mode.features(side.iter().map(|s| s.transition))
}

/// `grad_steps` BCE updates for every active discriminator that has data
/// on both sides. Each batch holds `batch_size / 2` positives and as many
/// negatives. Stages without data or already frozen are reported but not
/// touched.
pub fn train_discriminators<R: Rng + ?Sized>(
    bank: &mut DiscriminatorBank,
    buffers: &StageBuffers,
    grad_steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<StageReport>> {
    if batch_size < 2 {
        return Err(Error::usage("discriminator batch size must be at least 2"));
    }
    if buffers.num_stages() != bank.num_stages() {
        return Err(Error::compat(format!(
            "bank has {} stages, buffers {}",
            bank.num_stages(),
            buffers.num_stages()
        )));
    }
    let half = batch_size / 2;
    let mode = bank.input_mode;
    let rule = bank.early_stop;
    let mut reports = Vec::with_capacity(bank.num_stages());
    for k in 0..bank.num_stages() {
        let mut losses = Vec::new();
        let mut accs = Vec::new();
        for _ in 0..grad_steps {
            let disc = &mut bank.discs[k];
            if disc.status == DiscStatus::Frozen {
                break;
            }
            let Some(batch) = buffers.sample_discriminator_batch(k, half, rng) else {
                break;
            };
            let pos = side_features(mode, &batch.positives);
            let neg = side_features(mode, &batch.negatives);
            let (loss, acc) = disc.train_on(&pos, &neg)?;
            disc.record_accuracy(acc, &rule);
            losses.push(loss);
            accs.push(acc);
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        reports.push(StageReport {
            stage: k,
            loss: mean(&losses),
            accuracy: mean(&accs),
            frozen: bank.discs[k].status == DiscStatus::Frozen,
        });
    }
    Ok(reports)
}

/// Check every frozen discriminator on one fresh batch and unfreeze those
/// whose accuracy fell below the early-stop threshold. Returns the probe
/// accuracy per stage (`None` for active stages or missing data).
pub fn probe_discriminators<R: Rng + ?Sized>(
    bank: &mut DiscriminatorBank,
    buffers: &StageBuffers,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Option<f64>>> {
    let half = (batch_size / 2).max(1);
    let mode = bank.input_mode;
    let rule = bank.early_stop;
    let mut out = Vec::with_capacity(bank.num_stages());
    for k in 0..bank.num_stages() {
        if bank.discs[k].status != DiscStatus::Frozen {
            out.push(None);
            continue;
        }
        let Some(batch) = buffers.sample_discriminator_batch(k, half, rng) else {
            out.push(None);
            continue;
        };
        let net = &bank.discs[k].net;
        let pos = net.forward_batch(&side_features(mode, &batch.positives))?;
        let neg = net.forward_batch(&side_features(mode, &batch.negatives))?;
        let correct = pos.iter().filter(|&&z| z > 0.0).count() + neg.iter().filter(|&&z| z <= 0.0).count();
        let acc = correct as f64 / (pos.len() + neg.len()) as f64;
        if acc < rule.unfreeze_accuracy {
            let d = &mut bank.discs[k];
            d.status = DiscStatus::Active;
            d.accuracies.clear();
        }
        out.push(Some(acc));
    }
    Ok(out)
}
