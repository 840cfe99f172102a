//! Frozen-feature evaluation: background-invariance gap and a linear probe.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{EmbeddingSet, LEVELS};
use crate::error::{invalid, Error, Result};
use crate::nn::{gemm, Op};

/// Mean and spread of a set of cosines.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: libm::sqrt(var), count: values.len() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelInvariance {
    pub same_fg_diff_bg_cosine: Summary,
    pub diff_fg_cosine: Summary,
    pub gap: f64,
}

impl LevelInvariance {
    fn from_values(same: &[f64], diff: &[f64]) -> Self {
        let same = Summary::of(same);
        let diff = Summary::of(diff);
        Self { same_fg_diff_bg_cosine: same, diff_fg_cosine: diff, gap: same.mean - diff.mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Cosines averaged over the four levels.
    pub overall: LevelInvariance,
    pub per_level: [LevelInvariance; LEVELS],
}

impl InvarianceReport {
    pub fn gap(&self) -> f64 {
        self.overall.gap
    }
}

/// One embedded ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeItem {
    pub foreground_id: u64,
    pub class_id: usize,
    pub pool_id: u32,
    pub embedding: EmbeddingSet<f32>,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64) * (*x as f64)).sum();
    let nb: f64 = b.iter().map(|x| (*x as f64) * (*x as f64)).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0)
}

/// Same-foreground pairs on different pools versus different-class pairs on
/// different pools; the gap is the difference of their mean cosines.
pub fn invariance_report(items: &[ProbeItem]) -> Result<InvarianceReport> {
    let mut pools: Vec<u32> = items.iter().map(|i| i.pool_id).collect();
    pools.sort_unstable();
    pools.dedup();
    if pools.len() < 2 {
        return Err(invalid("invariance probe needs images from at least two background pools"));
    }
    let mut same: [Vec<f64>; LEVELS] = Default::default();
    let mut diff: [Vec<f64>; LEVELS] = Default::default();
    let mut same_all = Vec::new();
    let mut diff_all = Vec::new();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            if a.pool_id == b.pool_id {
                continue;
            }
            let bucket = if a.foreground_id == b.foreground_id {
                (&mut same, &mut same_all)
            } else if a.class_id != b.class_id {
                (&mut diff, &mut diff_all)
            } else {
                continue;
            };
            let mut total = 0.0;
            for l in 0..LEVELS {
                let c = cosine(&a.embedding.levels[l], &b.embedding.levels[l]);
                bucket.0[l].push(c);
                total += c;
            }
            bucket.1.push(total / LEVELS as f64);
        }
    }
    if same_all.is_empty() {
        return Err(invalid("no foreground appears on two different pools"));
    }
    if diff_all.is_empty() {
        return Err(invalid("no pair of different classes on different pools"));
    }
    Ok(InvarianceReport {
        overall: LevelInvariance::from_values(&same_all, &diff_all),
        per_level: core::array::from_fn(|l| LevelInvariance::from_values(&same[l], &diff[l])),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { iterations: 300, weight_decay: 1e-4 }
    }
}

/// Softmax regression on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `dim × n_classes`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn check_features(features: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(invalid("feature and label counts differ"));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(invalid("features must share one non-zero dimension"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(invalid(alloc::format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(dim)
}

fn softmax_rows(logits: &mut [f64], n_classes: usize) {
    for row in logits.chunks_exact_mut(n_classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

impl LinearProbe {
    /// Full-batch Nesterov gradient descent with step `1/L` from a power
    /// iteration estimate of the curvature bound.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let dim = check_features(features, labels, n_classes)?;
        let mut counts = vec![0usize; n_classes];
        labels.iter().for_each(|&l| counts[l] += 1);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(invalid(alloc::format!("class {empty} has no training samples")));
        }
        let n = features.len();
        let mut mean = vec![0.0; dim];
        for f in features {
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut scale = vec![0.0; dim];
        for f in features {
            scale.iter_mut().zip(f.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n as f64);
        }
        let scale: Vec<f64> = scale.iter().map(|v| if *v > 1e-12 { 1.0 / libm::sqrt(*v) } else { 0.0 }).collect();
        let mut probe = Self { n_classes, dim, mean, scale, weights: vec![0.0; dim * n_classes], bias: vec![0.0; n_classes] };
        let x = probe.standardise(features);

        // largest eigenvalue of X^T X / n, plus the bias column
        let mut v = vec![1.0 / libm::sqrt(dim as f64); dim];
        let mut xv = vec![0.0; n];
        let mut lambda = 1.0;
        for _ in 0..30 {
            gemm(n, dim, 1, &x, Op::N, &v, Op::N, &mut xv, false);
            let mut w = vec![0.0; dim];
            gemm(dim, n, 1, &x, Op::T, &xv, Op::N, &mut w, false);
            let norm = libm::sqrt(w.iter().map(|a| a * a).sum::<f64>());
            if norm == 0.0 {
                break;
            }
            lambda = norm / n as f64;
            v = w.iter().map(|a| a / norm).collect();
        }
        let lipschitz = 0.5 * (lambda + 1.0) + cfg.weight_decay;
        let step = 1.0 / lipschitz;

        let k = n_classes;
        let mut w = vec![0.0; dim * k];
        let mut b = vec![0.0; k];
        let mut w_prev = w.clone();
        let mut b_prev = b.clone();
        let mut logits = vec![0.0; n * k];
        let mut grad_w = vec![0.0; dim * k];
        for it in 0..cfg.iterations {
            let beta = it as f64 / (it as f64 + 3.0);
            let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + beta * (a - p)).collect();
            let yb: Vec<f64> = b.iter().zip(&b_prev).map(|(a, p)| a + beta * (a - p)).collect();
            for row in logits.chunks_exact_mut(k) {
                row.copy_from_slice(&yb);
            }
            gemm(n, dim, k, &x, Op::N, &yw, Op::N, &mut logits, true);
            softmax_rows(&mut logits, k);
            for (row, &l) in logits.chunks_exact_mut(k).zip(labels) {
                row[l] -= 1.0;
                row.iter_mut().for_each(|v| *v /= n as f64);
            }
            gemm(dim, n, k, &x, Op::T, &logits, Op::N, &mut grad_w, false);
            let mut grad_b = vec![0.0; k];
            for row in logits.chunks_exact(k) {
                grad_b.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            w_prev = w;
            b_prev = b;
            w = yw
                .iter()
                .zip(&grad_w)
                .map(|(y, g)| y - step * (g + cfg.weight_decay * y))
                .collect();
            b = yb.iter().zip(&grad_b).map(|(y, g)| y - step * g).collect();
        }
        probe.weights = w;
        probe.bias = b;
        Ok(probe)
    }

    fn standardise(&self, features: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(features.len() * self.dim);
        for f in features {
            out.extend(f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s));
        }
        out
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        if features.iter().any(|f| f.len() != self.dim) {
            return Err(invalid("feature dimension does not match the probe"));
        }
        let x = self.standardise(features);
        let k = self.n_classes;
        let mut logits = vec![0.0; features.len() * k];
        for row in logits.chunks_exact_mut(k) {
            row.copy_from_slice(&self.bias);
        }
        gemm(features.len(), self.dim, k, &x, Op::N, &self.weights, Op::N, &mut logits, true);
        Ok(logits
            .chunks_exact(k)
            .map(|row| {
                row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
            })
            .collect())
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        check_features(features, labels, self.n_classes)?;
        if features.is_empty() {
            return Err(Error::InvalidArgument("accuracy of an empty set".into()));
        }
        let predictions = self.predict(features)?;
        let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Concatenated levels as a probe feature vector; rejects non-unit levels.
pub fn probe_features(e: &EmbeddingSet<f32>) -> Result<Vec<f64>> {
    if e.max_norm_error() > crate::contrastive::UNIT_NORM_TOLERANCE {
        return Err(invalid("probe features must be unit-norm per level"));
    }
    Ok(e.levels.iter().flat_map(|l| l.iter().map(|&v| v as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::standard_normal;
    use crate::rng::seeded;
    use rand::Rng;

    fn unit(v: Vec<f32>) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn item(fg: u64, class: usize, pool: u32, v: Vec<f32>) -> ProbeItem {
        ProbeItem {
            foreground_id: fg,
            class_id: class,
            pool_id: pool,
            embedding: EmbeddingSet { levels: core::array::from_fn(|_| v.clone()) },
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.6, 0.8], &[0.6, 0.8]) - 1.0).abs() < 1e-7);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfectly_invariant_embeddings() {
        // embedding depends on class only
        let basis = |c: usize| {
            let mut v = vec![0.0f32; 4];
            v[c] = 1.0;
            v
        };
        let items: Vec<ProbeItem> =
            (0..12u64).map(|i| item(i / 3, (i / 3) as usize % 4, (i % 3) as u32, basis((i / 3) as usize % 4))).collect();
        let r = invariance_report(&items).unwrap();
        assert!((r.overall.same_fg_diff_bg_cosine.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.overall.diff_fg_cosine.mean, 0.0);
        assert!((r.gap() - 1.0).abs() < 1e-12);
        for l in r.per_level {
            assert!((l.gap - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_is_same_minus_diff() {
        let mut rng = seeded(3);
        let items: Vec<ProbeItem> = (0..30u64)
            .map(|i| item(i / 3, (i / 3) as usize % 5, (i % 3) as u32, unit((0..6).map(|_| standard_normal(&mut rng) as f32).collect())))
            .collect();
        let r = invariance_report(&items).unwrap();
        for l in r.per_level.iter().chain(core::iter::once(&r.overall)) {
            assert_eq!(l.gap, l.same_fg_diff_bg_cosine.mean - l.diff_fg_cosine.mean);
            for s in [l.same_fg_diff_bg_cosine, l.diff_fg_cosine] {
                assert!((-1.0..=1.0).contains(&s.mean));
            }
        }
        // 10 foregrounds x 3 cross-pool pairs
        assert_eq!(r.overall.same_fg_diff_bg_cosine.count, 30);
    }

    #[test]
    fn single_pool_is_rejected() {
        let items = vec![item(0, 0, 1, vec![1.0]), item(1, 1, 1, vec![1.0])];
        assert!(invariance_report(&items).is_err());
    }

    fn blobs(n_per: usize, k: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeded(seed);
        let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| 3.0 * standard_normal(&mut rng)).collect()).collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n_per {
            for (c, centre) in centres.iter().enumerate() {
                x.push(centre.iter().map(|m| m + standard_normal(&mut rng)).collect());
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn probe_separates_blobs() {
        let (x, y) = blobs(40, 5, 12, 1);
        let probe = LinearProbe::fit(&x, &y, 5, &ProbeConfig::default()).unwrap();
        assert!(probe.accuracy(&x, &y).unwrap() > 0.98);
    }

    #[test]
    fn probe_on_noise_is_near_chance() {
        let mut rng = seeded(9);
        let x: Vec<Vec<f64>> = (0..2000).map(|_| (0..8).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..10)).collect();
        let probe = LinearProbe::fit(&x[..1000], &y[..1000], 10, &ProbeConfig::default()).unwrap();
        let acc = probe.accuracy(&x[1000..], &y[1000..]).unwrap();
        assert!((acc - 0.1).abs() < 0.05, "{acc}");
    }

    #[test]
    fn probe_ignores_feature_scaling() {
        let (x, y) = blobs(20, 3, 6, 2);
        let scaled: Vec<Vec<f64>> = x.iter().map(|f| f.iter().map(|v| v * 7.5).collect()).collect();
        let a = LinearProbe::fit(&x, &y, 3, &ProbeConfig::default()).unwrap().predict(&x).unwrap();
        let b = LinearProbe::fit(&scaled, &y, 3, &ProbeConfig::default()).unwrap().predict(&scaled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_class_is_an_error() {
        let (x, y) = blobs(5, 2, 3, 4);
        assert!(LinearProbe::fit(&x, &y, 3, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn probe_features_require_unit_norm() {
        let good = EmbeddingSet { levels: core::array::from_fn(|_| vec![0.6f32, 0.8]) };
        assert_eq!(probe_features(&good).unwrap().len(), 8);
        let bad = EmbeddingSet { levels: core::array::from_fn(|_| vec![1.0f32, 1.0]) };
        assert!(probe_features(&bad).is_err());
    }
}
