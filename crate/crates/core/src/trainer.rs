//! One optimisation step of momentum-contrast pretraining.
//!
//! The query side is trained by SGD on the summed multi-view hierarchical
//! loss; the key side follows by exponential moving average and its
//! embeddings feed one negative queue per pyramid level.

use alloc::vec;
use alloc::vec::Vec;

use crate::contrastive::{multi_view_loss_with_grad, LossConfig, NegativeQueue};
use crate::cpj::ViewSet;
use crate::encoder::{image_to_input, momentum_update, EmbeddingSet, Encoder, EncoderPair, LEVELS};
use crate::error::{invalid, Error, Result};
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Cosine,
    /// x0.1 at 60% and again at 80% of training.
    Step,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Cosine => "cosine",
            LrSchedule::Step => "step",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(LrSchedule::Cosine),
            "step" => Some(LrSchedule::Step),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum_sgd: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub n_keys: usize,
    pub snapshot_every: u64,
    /// Key encoder EMA coefficient.
    pub key_momentum: f64,
    pub queue_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            base_lr: 0.03,
            momentum_sgd: 0.9,
            weight_decay: 1e-4,
            epochs: 30,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            n_keys: 1,
            snapshot_every: 1000,
            key_momentum: 0.999,
            queue_capacity: 4096,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<alloc::string::String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("train.batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            v.push("train.epochs must be >= 1".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            v.push("train.base_lr must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum_sgd) {
            v.push("train.momentum_sgd must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            v.push("train.weight_decay must be finite and >= 0".into());
        }
        if self.n_keys != 1 && self.n_keys != 3 {
            v.push(alloc::format!("train.n_keys must be 1 or 3, got {}", self.n_keys));
        }
        if self.snapshot_every == 0 {
            v.push("train.snapshot_every must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            v.push("train.key_momentum must lie in [0, 1]".into());
        }
        if self.queue_capacity == 0 {
            v.push("train.queue_capacity must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }

    /// Learning rate for the step numbered `step` (1-based) of `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let progress = if total == 0 { 1.0 } else { (step.min(total) as f64) / total as f64 };
        match self.lr_schedule {
            LrSchedule::Cosine => self.base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress)),
            LrSchedule::Step => {
                let drops = (progress >= 0.6) as i32 + (progress >= 0.8) as i32;
                self.base_lr * libm::pow(0.1, drops as f64)
            }
        }
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub pair: EncoderPair<T>,
    pub queues: Vec<NegativeQueue<T>>,
    /// SGD momentum buffer.
    pub velocity: Vec<T>,
    /// Completed steps.
    pub step: u64,
    pub seed: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(encoder: &Encoder, cfg: &TrainConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        cfg.validate()?;
        let pair = EncoderPair::new(encoder, cfg.key_momentum, rng)?;
        let n = pair.query.len();
        let dim = encoder.config.embed_dim;
        Ok(Self {
            pair,
            queues: (0..LEVELS).map(|_| NegativeQueue::new(dim, cfg.queue_capacity)).collect(),
            velocity: vec![T::zero(); n],
            step: 0,
            seed: cfg.seed,
        })
    }
}

/// Per-step metrics record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub per_level: [f64; LEVELS],
    pub lr: f64,
    pub queue_fill: usize,
    pub pos_logit_mean: f64,
}

/// SGD with momentum and coupled weight decay: `v = mu*v + g + wd*p; p -= lr*v`.
pub fn sgd_update<T: Real>(params: &mut [T], velocity: &mut [T], grads: &[T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = mu * *v + *g + wd * *p;
        *p -= lr * *v;
    }
}

/// Runs one step on `batch`; `total_steps` drives the schedule.
pub fn train_step<T: Real>(
    encoder: &Encoder,
    state: &mut TrainState<T>,
    batch: &[ViewSet],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    total_steps: u64,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(bad) = batch.iter().find(|v| v.keys.len() != cfg.n_keys) {
        return Err(invalid(alloc::format!(
            "view set for foreground {} has {} keys, expected {}",
            bad.foreground_id,
            bad.keys.len(),
            cfg.n_keys
        )));
    }
    let step = state.step + 1;
    let lr = cfg.lr_at(step, total_steps);
    let mut grads = vec![T::zero(); state.pair.query.len()];
    let mut key_batch: [Vec<Vec<T>>; LEVELS] = Default::default();
    let mut loss = 0.0;
    let mut per_level = [0.0; LEVELS];
    let mut pos = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for vs in batch {
        let keys: Vec<EmbeddingSet<T>> = vs
            .keys
            .iter()
            .map(|k| encoder.extract_embeddings(&state.pair.key, &image_to_input(&k.image), &k.bbox))
            .collect::<Result<_>>()?;
        let (q, cache) = encoder.embed_with_cache(&state.pair.query, &image_to_input(&vs.query.image), &vs.query.bbox)?;
        let out = multi_view_loss_with_grad(&q, &keys, &state.queues, loss_cfg)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, foreground_ids: batch.iter().map(|v| v.foreground_id).collect() });
        }
        loss += out.loss * scale;
        pos += out.positive_logit * scale;
        for l in 0..LEVELS {
            per_level[l] += out.per_level[l] * scale;
        }
        let d: [Vec<T>; LEVELS] =
            core::array::from_fn(|l| out.grad_query[l].iter().map(|g| T::of(g * scale)).collect());
        encoder.backward(&state.pair.query, &cache, &d, &mut grads);
        for k in keys {
            for (l, level) in k.levels.into_iter().enumerate() {
                key_batch[l].push(level);
            }
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { step, foreground_ids: batch.iter().map(|v| v.foreground_id).collect() });
    }
    sgd_update(&mut state.pair.query, &mut state.velocity, &grads, lr, cfg.momentum_sgd, cfg.weight_decay);
    momentum_update(&mut state.pair)?;
    for (queue, keys) in state.queues.iter_mut().zip(&key_batch) {
        queue.enqueue(keys)?;
    }
    state.step = step;
    Ok(StepMetrics { step, loss, per_level, lr, queue_fill: state.queues[0].len(), pos_logit_mean: pos })
}
