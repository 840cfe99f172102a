//! Query/key encoder: convolutional backbone, FPN neck, per-level RoIAlign
//! and a shared R-CNN-style projection head.
//!
//! The backbone has a stride-2 stem followed by four stride-2 stages, giving
//! the ResNet stride layout 4/8/16/32 for C2..C5. The FPN turns those into
//! P2..P5 with a common channel count. The same box is pooled from every level
//! and passed through one head whose weights are shared across levels, so an
//! [`EmbeddingSet`] always holds four unit vectors.

pub mod roi;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Image;
use crate::nn::{
    l2_normalize, l2_normalize_backward, upsample2_add, upsample2_backward, ConvBlock, ConvCache, FeatureMap,
    LayoutBuilder, Linear, Real,
};
pub use roi::{roi_align, RoiPlan};

/// Number of pyramid levels (P2..P5).
pub const LEVELS: usize = 4;
pub const LEVEL_NAMES: [&str; LEVELS] = ["P2", "P3", "P4", "P5"];
pub const LEVEL_STRIDES: [usize; LEVELS] = [4, 8, 16, 32];

/// Per-channel normalization applied when an image becomes network input.
const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    /// Output channels of the C2..C5 stages.
    pub stage_channels: [usize; LEVELS],
    /// Stride-1 3x3 blocks appended to each stage after its downsampling block.
    pub extra_blocks: usize,
    pub fpn_channels: usize,
    pub norm_groups: usize,
    pub roi_size: usize,
    pub head_convs: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stem_channels: 8,
            stage_channels: [16, 32, 32, 32],
            extra_blocks: 0,
            fpn_channels: 16,
            norm_groups: 8,
            roi_size: 7,
            head_convs: 2,
            head_hidden: 128,
            embed_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut channels = vec![self.stem_channels, self.fpn_channels];
        channels.extend_from_slice(&self.stage_channels);
        if channels.iter().any(|&c| c == 0) || self.embed_dim == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidConfig("encoder widths must be positive".into()));
        }
        if self.norm_groups == 0 || channels.iter().any(|&c| c % self.norm_groups != 0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "norm_groups {} must divide every channel count {:?}",
                self.norm_groups,
                channels
            )));
        }
        if self.roi_size == 0 {
            return Err(Error::InvalidConfig("roi_size must be positive".into()));
        }
        Ok(())
    }
}

/// P2..P5 feature maps sharing one channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: [FeatureMap<T>; LEVELS],
}

/// Per-level unit-norm embeddings of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    pub levels: [Vec<T>; LEVELS],
}

impl<T: Real> EmbeddingSet<T> {
    pub fn dim(&self) -> usize {
        self.levels[0].len()
    }

    /// Largest deviation of any level's norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.levels
            .iter()
            .map(|e| (libm::sqrt(e.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>()) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Level embeddings concatenated P2..P5.
    pub fn concat(&self) -> Vec<T> {
        self.levels.iter().flat_map(|l| l.iter().copied()).collect()
    }
}

/// Converts an 8-bit image into a normalized `3 x H x W` input map.
pub fn image_to_input<T: Real>(img: &Image) -> FeatureMap<T> {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![T::zero(); 3 * w * h];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = T::of((px[c] as f64 / 255.0 - PIXEL_MEAN[c]) / PIXEL_STD[c]);
        }
    }
    FeatureMap::from_vec(3, h, w, data)
}

/// Network topology plus the offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    stem: ConvBlock,
    stages: Vec<Vec<ConvBlock>>,
    lateral: Vec<ConvBlock>,
    smooth: Vec<ConvBlock>,
    head_convs: Vec<ConvBlock>,
    fc1: Linear,
    fc2: Linear,
    layout: LayoutBuilder,
}

struct BackboneCache<T> {
    stem: ConvCache<T>,
    stages: Vec<Vec<ConvCache<T>>>,
    stage_out_shapes: Vec<(usize, usize, usize)>,
    lateral: Vec<ConvCache<T>>,
    smooth: Vec<ConvCache<T>>,
    inner_shapes: Vec<(usize, usize, usize)>,
}

struct HeadCache<T> {
    plan: RoiPlan,
    convs: Vec<ConvCache<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    raw: Vec<T>,
    norm: T,
    embedding: Vec<T>,
}

/// Everything the backward pass of [`Encoder::embed_with_cache`] needs.
pub struct EmbedCache<T> {
    backbone: BackboneCache<T>,
    pyramid_shapes: [(usize, usize, usize); LEVELS],
    heads: Vec<HeadCache<T>>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let g = Some(config.norm_groups);
        let mut layout = LayoutBuilder::default();
        let stem = ConvBlock::new(&mut layout, 3, config.stem_channels, 3, 2, g, true);
        let mut stages = Vec::with_capacity(LEVELS);
        let mut cin = config.stem_channels;
        for &cout in &config.stage_channels {
            let mut blocks = vec![ConvBlock::new(&mut layout, cin, cout, 3, 2, g, true)];
            for _ in 0..config.extra_blocks {
                blocks.push(ConvBlock::new(&mut layout, cout, cout, 3, 1, g, true));
            }
            stages.push(blocks);
            cin = cout;
        }
        let f = config.fpn_channels;
        let lateral = config
            .stage_channels
            .iter()
            .map(|&c| ConvBlock::new(&mut layout, c, f, 1, 1, None, false))
            .collect();
        let smooth = (0..LEVELS).map(|_| ConvBlock::new(&mut layout, f, f, 3, 1, None, false)).collect();
        let head_convs = (0..config.head_convs)
            .map(|_| ConvBlock::new(&mut layout, f, f, 3, 1, g, true))
            .collect();
        let fc1 = Linear::new(&mut layout, f * config.roi_size * config.roi_size, config.head_hidden, true);
        let fc2 = Linear::new(&mut layout, config.head_hidden, config.embed_dim, false);
        Ok(Self { config, stem, stages, lateral, smooth, head_convs, fc1, fc2, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.layout.initialize(rng)
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::CorruptedCheckpoint(alloc::format!(
                "parameter vector has {} entries, encoder expects {}",
                params.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    fn check_input<T>(input: &FeatureMap<T>) -> Result<()> {
        if input.channels != 3 {
            return Err(invalid("encoder input must have 3 channels"));
        }
        if input.height == 0 || input.width == 0 || input.height % 32 != 0 || input.width % 32 != 0 {
            return Err(invalid(alloc::format!(
                "input {}x{} is not a positive multiple of 32",
                input.width,
                input.height
            )));
        }
        Ok(())
    }

    /// Backbone + FPN forward.
    pub fn backbone_fpn<T: Real>(&self, params: &[T], input: &FeatureMap<T>) -> Result<FeaturePyramid<T>> {
        self.check_params(params)?;
        Self::check_input(input)?;
        Ok(self.pyramid_forward(params, input).0)
    }

    fn pyramid_forward<T: Real>(&self, params: &[T], input: &FeatureMap<T>) -> (FeaturePyramid<T>, BackboneCache<T>) {
        let (mut x, stem_cache) = self.stem.forward(params, input);
        let mut stage_caches = Vec::with_capacity(LEVELS);
        let mut stage_outs = Vec::with_capacity(LEVELS);
        for blocks in &self.stages {
            let mut caches = Vec::with_capacity(blocks.len());
            for block in blocks {
                let (y, c) = block.forward(params, &x);
                caches.push(c);
                x = y;
            }
            stage_caches.push(caches);
            stage_outs.push(x.clone());
        }
        let mut lateral_caches = Vec::with_capacity(LEVELS);
        let mut inner: Vec<FeatureMap<T>> = Vec::with_capacity(LEVELS);
        for (lat, c) in self.lateral.iter().zip(&stage_outs) {
            let (y, cache) = lat.forward(params, c);
            lateral_caches.push(cache);
            inner.push(y);
        }
        for l in (0..LEVELS - 1).rev() {
            let (lo, hi) = inner.split_at_mut(l + 1);
            upsample2_add(&mut lo[l], &hi[0]);
        }
        let mut smooth_caches = Vec::with_capacity(LEVELS);
        let mut outs = Vec::with_capacity(LEVELS);
        for (conv, m) in self.smooth.iter().zip(&inner) {
            let (y, cache) = conv.forward(params, m);
            smooth_caches.push(cache);
            outs.push(y);
        }
        let cache = BackboneCache {
            stem: stem_cache,
            stages: stage_caches,
            stage_out_shapes: stage_outs.iter().map(|m| (m.channels, m.height, m.width)).collect(),
            lateral: lateral_caches,
            smooth: smooth_caches,
            inner_shapes: inner.iter().map(|m| (m.channels, m.height, m.width)).collect(),
        };
        let levels: [FeatureMap<T>; LEVELS] = outs.try_into().unwrap_or_else(|_| unreachable!());
        (FeaturePyramid { levels }, cache)
    }

    fn head_forward<T: Real>(&self, params: &[T], pooled: FeatureMap<T>, plan: RoiPlan) -> HeadCache<T> {
        let mut x = pooled;
        let mut convs = Vec::with_capacity(self.head_convs.len());
        for conv in &self.head_convs {
            let (y, c) = conv.forward(params, &x);
            convs.push(c);
            x = y;
        }
        let flat = x.data;
        let hidden = self.fc1.forward(params, &flat);
        let raw = self.fc2.forward(params, &hidden);
        let (embedding, norm) = l2_normalize(&raw);
        HeadCache { plan, convs, flat, hidden, raw, norm, embedding }
    }

    /// Embeddings of `b` on every pyramid level, keeping what backward needs.
    pub fn embed_with_cache<T: Real>(
        &self,
        params: &[T],
        input: &FeatureMap<T>,
        b: &BoundingBox,
    ) -> Result<(EmbeddingSet<T>, EmbedCache<T>)> {
        self.check_params(params)?;
        Self::check_input(input)?;
        b.validate()?;
        let (pyramid, backbone) = self.pyramid_forward(params, input);
        let mut heads = Vec::with_capacity(LEVELS);
        for (level, map) in pyramid.levels.iter().enumerate() {
            let plan = RoiPlan::new(map.height, map.width, b, self.config.roi_size, LEVEL_STRIDES[level] as f64)?;
            let pooled = plan.forward(map);
            heads.push(self.head_forward(params, pooled, plan));
        }
        let levels: [Vec<T>; LEVELS] = core::array::from_fn(|l| heads[l].embedding.clone());
        let pyramid_shapes = core::array::from_fn(|l| {
            let m = &pyramid.levels[l];
            (m.channels, m.height, m.width)
        });
        Ok((EmbeddingSet { levels }, EmbedCache { backbone, pyramid_shapes, heads }))
    }

    /// Forward-only embedding extraction.
    pub fn extract_embeddings<T: Real>(&self, params: &[T], input: &FeatureMap<T>, b: &BoundingBox) -> Result<EmbeddingSet<T>> {
        let (emb, _) = self.embed_with_cache(params, input, b)?;
        debug_assert!(emb.max_norm_error() < 1e-4);
        Ok(emb)
    }

    /// Embeddings of several boxes on one image, sharing the backbone pass.
    pub fn extract_many<T: Real>(&self, params: &[T], input: &FeatureMap<T>, boxes: &[BoundingBox]) -> Result<Vec<EmbeddingSet<T>>> {
        let pyramid = self.backbone_fpn(params, input)?;
        boxes
            .iter()
            .map(|b| {
                let mut levels: [Vec<T>; LEVELS] = Default::default();
                for (level, map) in pyramid.levels.iter().enumerate() {
                    let plan = RoiPlan::new(map.height, map.width, b, self.config.roi_size, LEVEL_STRIDES[level] as f64)?;
                    let pooled = plan.forward(map);
                    levels[level] = self.head_forward(params, pooled, plan).embedding;
                }
                Ok(EmbeddingSet { levels })
            })
            .collect()
    }

    /// Accumulates into `grads` the gradient of a scalar whose derivative with
    /// respect to the embeddings is `d_embeddings`.
    pub fn backward<T: Real>(&self, params: &[T], cache: &EmbedCache<T>, d_embeddings: &[Vec<T>; LEVELS], grads: &mut [T]) {
        assert_eq!(grads.len(), self.num_params(), "gradient buffer size");
        let f = self.config.fpn_channels;
        let s = self.config.roi_size;
        let mut d_pyramid: Vec<FeatureMap<T>> = cache
            .pyramid_shapes
            .iter()
            .map(|&(c, h, w)| FeatureMap::zeros(c, h, w))
            .collect();
        for (level, head) in cache.heads.iter().enumerate() {
            let d_raw = l2_normalize_backward(&head.embedding, head.norm, &d_embeddings[level]);
            let d_hidden = self.fc2.backward(params, &head.hidden, &head.raw, &d_raw, grads);
            let d_flat = self.fc1.backward(params, &head.flat, &head.hidden, &d_hidden, grads);
            let mut d = FeatureMap::from_vec(f, s, s, d_flat);
            for (conv, c) in self.head_convs.iter().zip(&head.convs).rev() {
                d = conv
                    .backward(params, c, &d, grads, true)
                    .expect("input gradient requested");
            }
            head.plan.backward(&d, &mut d_pyramid[level]);
        }
        let bb = &cache.backbone;
        let mut d_inner: Vec<FeatureMap<T>> = Vec::with_capacity(LEVELS);
        for (l, conv) in self.smooth.iter().enumerate() {
            let d = conv
                .backward(params, &bb.smooth[l], &d_pyramid[l], grads, true)
                .expect("input gradient requested");
            d_inner.push(d);
        }
        for l in 0..LEVELS - 1 {
            let (lo, hi) = d_inner.split_at_mut(l + 1);
            upsample2_backward(&lo[l], &mut hi[0]);
        }
        let mut d_stage: Vec<FeatureMap<T>> = Vec::with_capacity(LEVELS);
        for (l, conv) in self.lateral.iter().enumerate() {
            debug_assert_eq!(bb.inner_shapes[l], (d_inner[l].channels, d_inner[l].height, d_inner[l].width));
            let d = conv
                .backward(params, &bb.lateral[l], &d_inner[l], grads, true)
                .expect("input gradient requested");
            d_stage.push(d);
        }
        let mut carry: Option<FeatureMap<T>> = None;
        for l in (0..LEVELS).rev() {
            let mut d = d_stage[l].clone();
            debug_assert_eq!(bb.stage_out_shapes[l], (d.channels, d.height, d.width));
            if let Some(c) = carry.take() {
                d.data.iter_mut().zip(&c.data).for_each(|(a, &b)| *a += b);
            }
            for (block, c) in self.stages[l].iter().zip(&bb.stages[l]).rev() {
                d = block.backward(params, c, &d, grads, true).expect("input gradient requested");
            }
            carry = Some(d);
        }
        let d_stem = carry.expect("four stages");
        self.stem.backward(params, &bb.stem, &d_stem, grads, false);
    }
}

/// Query and key parameter vectors of one encoder topology.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair<T> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub momentum: f64,
}

impl<T: Real> EncoderPair<T> {
    /// Both sides start from the same draw, as in MoCo.
    pub fn new(encoder: &Encoder, momentum: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1]".into()));
        }
        let query: Vec<T> = encoder.init_params(rng);
        Ok(Self { key: query.clone(), query, momentum })
    }

    /// Euclidean distance between the key and query parameter vectors.
    pub fn divergence(&self) -> f64 {
        let sq: f64 = self
            .query
            .iter()
            .zip(&self.key)
            .map(|(&q, &k)| {
                let d = q.as_f64() - k.as_f64();
                d * d
            })
            .sum();
        libm::sqrt(sq)
    }
}

/// `key <- m * key + (1 - m) * query`, element-wise; the query side is untouched.
pub fn momentum_update<T: Real>(pair: &mut EncoderPair<T>) -> Result<()> {
    if pair.query.len() != pair.key.len() {
        return Err(Error::CorruptedCheckpoint(alloc::format!(
            "key has {} parameters, query has {}",
            pair.key.len(),
            pair.query.len()
        )));
    }
    let m = T::of(pair.momentum);
    let one_minus = T::of(1.0 - pair.momentum);
    for (k, &q) in pair.key.iter_mut().zip(&pair.query) {
        *k = m * *k + one_minus * q;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
