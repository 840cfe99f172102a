//! Per-level InfoNCE against a FIFO queue of past key embeddings.
//!
//! For one query embedding `q`, one positive key `k` and queued negatives `n_j`,
//!
//! ```text
//! loss = -log( exp(q.k / t) / (exp(q.k / t) + sum_j exp(q.n_j / t)) )
//! ```
//!
//! The hierarchical loss applies this on every pyramid level and takes the
//! weighted sum with the level weights; the multi-view loss sums the
//! hierarchical loss over all key views of one query.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{EmbeddingSet, LEVELS};
use crate::error::{invalid, Error, Result};
use crate::nn::Real;
use crate::rng::fnv1a;

/// Tolerance on `||v|| - 1` accepted by [`NegativeQueue::enqueue`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Fixed-capacity ring buffer of `dim`-dimensional unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue<T> {
    dim: usize,
    capacity: usize,
    data: Vec<T>,
    len: usize,
    /// Slot the next enqueued vector is written to.
    cursor: usize,
}

impl<T: Real> NegativeQueue<T> {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            capacity,
            data: vec![T::zero(); dim * capacity],
            len: 0,
            cursor: 0,
        }
    }

    /// Rebuilds a queue from entries listed oldest first.
    pub fn from_entries(dim: usize, capacity: usize, entries: &[T]) -> Result<Self> {
        if dim == 0 || entries.len() % dim != 0 || entries.len() / dim > capacity {
            return Err(invalid("queue entries do not fit the declared shape"));
        }
        let mut q = Self::new(dim, capacity);
        let n = entries.len() / dim;
        q.data[..entries.len()].copy_from_slice(entries);
        q.len = n;
        q.cursor = if capacity == 0 { 0 } else { n % capacity };
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Stored vectors in storage order (not FIFO order); order does not affect
    /// the loss.
    pub fn stored(&self) -> impl Iterator<Item = &[T]> {
        self.data[..self.len * self.dim].chunks_exact(self.dim.max(1))
    }

    /// Entries oldest first.
    pub fn entries(&self) -> Vec<&[T]> {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len)
            .map(|i| {
                let slot = (start + i) % self.capacity;
                &self.data[slot * self.dim..(slot + 1) * self.dim]
            })
            .collect()
    }

    /// Flattened entries oldest first.
    pub fn entries_flat(&self) -> Vec<T> {
        self.entries().into_iter().flatten().copied().collect()
    }

    /// Checksum of the queue contents in FIFO order.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len * self.dim * 8 + 8);
        bytes.extend_from_slice(&(self.len as u64).to_le_bytes());
        for e in self.entries() {
            for v in e {
                bytes.extend_from_slice(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    /// Appends `batch` in order, evicting the oldest entries once full.
    ///
    /// The whole batch is validated before anything is written.
    pub fn enqueue(&mut self, batch: &[Vec<T>]) -> Result<()> {
        for v in batch {
            if v.len() != self.dim {
                return Err(invalid(alloc::format!("queue expects dim {}, got {}", self.dim, v.len())));
            }
            let norm = libm::sqrt(v.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>());
            if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                return Err(invalid(alloc::format!("queue entries must be unit norm, got {norm}")));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for v in batch {
            let slot = self.cursor;
            self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(v);
            self.cursor = (self.cursor + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(())
    }
}

/// InfoNCE settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    /// P2..P5 weights; non-negative and summing to one.
    pub level_weights: [f64; LEVELS],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            level_weights: [0.25; LEVELS],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.level_weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidConfig("level weights must be non-negative".into()));
        }
        let total: f64 = self.level_weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(alloc::format!("level weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}

/// Loss value, its gradient with respect to `e_q`, and the positive logit.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub positive_logit: f64,
}

/// InfoNCE of one query against its positive key and the queued negatives.
pub fn info_nce<T: Real>(e_q: &[T], e_k_pos: &[T], queue: &NegativeQueue<T>, temperature: f64) -> Result<f64> {
    Ok(info_nce_with_grad(e_q, e_k_pos, queue, temperature)?.loss)
}

/// [`info_nce`] together with `d loss / d e_q`.
///
/// With softmax weights `p_0` (positive) and `p_j` (negatives),
/// `d loss / d e_q = ((p_0 - 1) k + sum_j p_j n_j) / t`.
pub fn info_nce_with_grad<T: Real>(
    e_q: &[T],
    e_k_pos: &[T],
    queue: &NegativeQueue<T>,
    temperature: f64,
) -> Result<InfoNceOutput> {
    if e_q.len() != e_k_pos.len() || (queue.len() > 0 && queue.dim() != e_q.len()) {
        return Err(invalid(alloc::format!(
            "dimension mismatch: query {}, key {}, queue {}",
            e_q.len(),
            e_k_pos.len(),
            queue.dim()
        )));
    }
    if !(temperature > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let inv_t = 1.0 / temperature;
    let positive_logit = dot(e_q, e_k_pos) * inv_t;
    let negative_logits: Vec<f64> = queue.stored().map(|n| dot(e_q, n) * inv_t).collect();
    let max = negative_logits.iter().copied().fold(positive_logit, f64::max);
    let pos_exp = libm::exp(positive_logit - max);
    let neg_exps: Vec<f64> = negative_logits.iter().map(|&l| libm::exp(l - max)).collect();
    let denom = pos_exp + neg_exps.iter().sum::<f64>();
    let loss = -(positive_logit - max - libm::log(denom));

    let mut grad = vec![0.0; e_q.len()];
    let p0 = pos_exp / denom;
    for (g, &k) in grad.iter_mut().zip(e_k_pos) {
        *g = (p0 - 1.0) * k.as_f64() * inv_t;
    }
    for (n, &e) in queue.stored().zip(&neg_exps) {
        let pj = e / denom * inv_t;
        for (g, &v) in grad.iter_mut().zip(n) {
            *g += pj * v.as_f64();
        }
    }
    Ok(InfoNceOutput {
        loss: loss.max(0.0),
        grad_query: grad,
        positive_logit,
    })
}

/// Per-level InfoNCE combined with the level weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalOutput {
    pub loss: f64,
    pub per_level: [f64; LEVELS],
    /// Gradient with respect to each level of the query embedding set.
    pub grad_query: [Vec<f64>; LEVELS],
    /// Mean positive logit over levels.
    pub positive_logit: f64,
}

fn check_levels<T: Real>(set: &EmbeddingSet<T>) -> Result<()> {
    if set.levels.iter().any(|l| l.is_empty()) {
        return Err(invalid("embedding set is missing a level"));
    }
    Ok(())
}

pub fn hierarchical_loss<T: Real>(
    q: &EmbeddingSet<T>,
    k: &EmbeddingSet<T>,
    queues: &[NegativeQueue<T>],
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(hierarchical_loss_with_grad(q, k, queues, cfg)?.loss)
}

pub fn hierarchical_loss_with_grad<T: Real>(
    q: &EmbeddingSet<T>,
    k: &EmbeddingSet<T>,
    queues: &[NegativeQueue<T>],
    cfg: &LossConfig,
) -> Result<HierarchicalOutput> {
    if queues.len() != LEVELS {
        return Err(invalid(alloc::format!("expected {LEVELS} queues, got {}", queues.len())));
    }
    check_levels(q)?;
    check_levels(k)?;
    let mut out = HierarchicalOutput {
        loss: 0.0,
        per_level: [0.0; LEVELS],
        grad_query: Default::default(),
        positive_logit: 0.0,
    };
    for level in 0..LEVELS {
        let w = cfg.level_weights[level];
        let r = info_nce_with_grad(&q.levels[level], &k.levels[level], &queues[level], cfg.temperature)?;
        out.loss += w * r.loss;
        out.per_level[level] = r.loss;
        out.positive_logit += r.positive_logit / LEVELS as f64;
        out.grad_query[level] = r.grad_query.into_iter().map(|g| g * w).collect();
    }
    Ok(out)
}

/// Sum of hierarchical losses over every key view of one query.
pub fn multi_view_loss<T: Real>(
    q: &EmbeddingSet<T>,
    keys: &[EmbeddingSet<T>],
    queues: &[NegativeQueue<T>],
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(multi_view_loss_with_grad(q, keys, queues, cfg)?.loss)
}

pub fn multi_view_loss_with_grad<T: Real>(
    q: &EmbeddingSet<T>,
    keys: &[EmbeddingSet<T>],
    queues: &[NegativeQueue<T>],
    cfg: &LossConfig,
) -> Result<HierarchicalOutput> {
    if keys.is_empty() {
        return Err(invalid("multi-view loss needs at least one key view"));
    }
    let mut total: Option<HierarchicalOutput> = None;
    for k in keys {
        let r = hierarchical_loss_with_grad(q, k, queues, cfg)?;
        match total.as_mut() {
            None => total = Some(r),
            Some(t) => {
                t.loss += r.loss;
                t.positive_logit += r.positive_logit;
                for level in 0..LEVELS {
                    t.per_level[level] += r.per_level[level];
                    t.grad_query[level].iter_mut().zip(&r.grad_query[level]).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    let mut t = total.expect("keys non-empty");
    t.positive_logit /= keys.len() as f64;
    Ok(t)
}
