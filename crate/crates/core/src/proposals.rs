//! Unsupervised foreground proposals.
//!
//! Two cheap generators stand in for selective search behind one interface:
//!
//! - `EnergySampler` enumerates boxes on a regular grid and scores each by
//!   the mean gradient magnitude inside it (summed-area table, O(1) per box),
//!   then keeps a diverse top set with greedy NMS.
//! - `GraphSegmentation` over-segments the image with the Felzenszwalb-
//!   Huttenlocher graph criterion, then greedily merges adjacent regions by
//!   colour and size similarity; every region along the way contributes its
//!   bounding box, scored by how densely the region fills that box.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub source_image_id: u64,
    /// Generator-dependent objectness; higher is more object-like.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalStrategy {
    EnergySampler,
    GraphSegmentation,
}

impl ProposalStrategy {
    pub fn name(self) -> &'static str {
        match self {
            ProposalStrategy::EnergySampler => "energy_sampler",
            ProposalStrategy::GraphSegmentation => "graph_segmentation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "energy_sampler" => Some(ProposalStrategy::EnergySampler),
            "graph_segmentation" => Some(ProposalStrategy::GraphSegmentation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalGeneratorConfig {
    pub strategy: ProposalStrategy,
    /// Box area bounds as fractions of the image area.
    pub min_box_fraction: f64,
    pub max_box_fraction: f64,
    pub candidates_per_image: usize,
}

impl Default for ProposalGeneratorConfig {
    fn default() -> Self {
        Self {
            strategy: ProposalStrategy::GraphSegmentation,
            min_box_fraction: 0.05,
            max_box_fraction: 0.5,
            candidates_per_image: 32,
        }
    }
}

impl ProposalGeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_box_fraction > 0.0
            && self.min_box_fraction < self.max_box_fraction
            && self.max_box_fraction <= 1.0)
        {
            return Err(Error::InvalidConfig(
                "proposal box fractions must satisfy 0 < min < max <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Widest aspect ratio a generator emits; the filter then trims the boundary itself.
const GENERATOR_MAX_ASPECT: f64 = 3.0;
/// Overlap above which a lower-scored candidate is suppressed.
const NMS_IOU: f64 = 0.7;

pub fn generate_proposals<R: Rng + ?Sized>(
    image: &Image,
    image_id: u64,
    cfg: &ProposalGeneratorConfig,
    rng: &mut R,
) -> Result<Vec<Proposal>> {
    if image.is_empty() {
        return Err(invalid("cannot generate proposals on an empty image"));
    }
    cfg.validate()?;
    if cfg.candidates_per_image == 0 {
        return Ok(Vec::new());
    }
    let scored = match cfg.strategy {
        ProposalStrategy::EnergySampler => energy_candidates(image, cfg),
        ProposalStrategy::GraphSegmentation => segmentation_candidates(image, cfg),
    };
    Ok(rank_and_suppress(scored, cfg.candidates_per_image, rng)
        .into_iter()
        .map(|(bbox, score)| Proposal { bbox, source_image_id: image_id, score })
        .collect())
}

fn area_ok(b: &BoundingBox, image_area: f64, cfg: &ProposalGeneratorConfig) -> bool {
    let frac = b.area() / image_area;
    let ar = b.aspect_ratio();
    frac >= cfg.min_box_fraction
        && frac <= cfg.max_box_fraction
        && ar <= GENERATOR_MAX_ASPECT
        && ar >= 1.0 / GENERATOR_MAX_ASPECT
}

/// Orders by score (random tie-break), then greedy NMS down to `keep` boxes.
fn rank_and_suppress<R: Rng + ?Sized>(
    candidates: Vec<(BoundingBox, f64)>,
    keep: usize,
    rng: &mut R,
) -> Vec<(BoundingBox, f64)> {
    let mut keyed: Vec<(BoundingBox, f64, u64)> = candidates.into_iter().map(|(b, s)| (b, s, rng.gen())).collect();
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut kept: Vec<(BoundingBox, f64)> = Vec::with_capacity(keep);
    for (b, s, _) in keyed {
        if kept.len() == keep {
            break;
        }
        if kept.iter().all(|(k, _)| iou(k, &b).map_or(true, |v| v <= NMS_IOU)) {
            kept.push((b, s));
        }
    }
    kept
}

fn luma(px: [u8; 3]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(values: &[f64], w: usize, h: usize) -> Self {
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += values[y * w + x];
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)
    }
}

/// Sobel gradient magnitude of the luma channel (edge pixels replicate).
pub fn gradient_magnitude(image: &Image) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let gray: Vec<f64> = image.data().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
    let at = |x: isize, y: isize| -> f64 {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        gray[yy * w + xx]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out[y as usize * w + x as usize] = libm::sqrt(gx * gx + gy * gy) / 8.0;
        }
    }
    out
}

fn grid_positions(extent: usize, step: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..extent).step_by(step).collect();
    if *v.last().unwrap_or(&0) != extent {
        v.push(extent);
    }
    v
}

fn energy_candidates(image: &Image, cfg: &ProposalGeneratorConfig) -> Vec<(BoundingBox, f64)> {
    let (w, h) = (image.width(), image.height());
    let integral = Integral::new(&gradient_magnitude(image), w, h);
    let step = (w.min(h) / 32).max(2);
    let xs = grid_positions(w, step);
    let ys = grid_positions(h, step);
    let image_area = (w * h) as f64;
    let mut out = Vec::new();
    for (i, &x0) in xs.iter().enumerate() {
        for &x1 in &xs[i + 1..] {
            for (j, &y0) in ys.iter().enumerate() {
                for &y1 in &ys[j + 1..] {
                    let b = BoundingBox { x0: x0 as f64, y0: y0 as f64, x1: x1 as f64, y1: y1 as f64 };
                    if !area_ok(&b, image_area, cfg) {
                        continue;
                    }
                    let mean = integral.rect(x0, y0, x1, y1) / b.area();
                    out.push((b, mean));
                }
            }
        }
    }
    out
}

/// Union-find over pixels with the per-component internal difference.
struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n], internal: vec![0.0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, weight: f64) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = weight.max(self.internal[big]).max(self.internal[small]);
        big
    }
}

/// Felzenszwalb-Huttenlocher segmentation; returns a region label per pixel
/// (labels are dense, `0..n_regions`).
pub fn felzenszwalb(image: &Image, scale: f64, min_size: usize) -> (Vec<usize>, usize) {
    let (w, h) = (image.width(), image.height());
    let smooth = gaussian_smooth(image, 0.8);
    let px = |x: usize, y: usize| -> [f64; 3] {
        let i = (y * w + x) * 3;
        [smooth[i], smooth[i + 1], smooth[i + 2]]
    };
    let dist = |a: [f64; 3], b: [f64; 3]| libm::sqrt((0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>());
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if x + 1 < w {
                edges.push((dist(px(x, y), px(x + 1, y)), a, a + 1));
            }
            if y + 1 < h {
                edges.push((dist(px(x, y), px(x, y + 1)), a, a + w));
            }
            if x + 1 < w && y + 1 < h {
                edges.push((dist(px(x, y), px(x + 1, y + 1)), a, a + w + 1));
            }
            if x > 0 && y + 1 < h {
                edges.push((dist(px(x, y), px(x - 1, y + 1)), a, a + w - 1));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut forest = Forest::new(w * h);
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra] + scale / forest.size[ra] as f64;
        let tb = forest.internal[rb] + scale / forest.size[rb] as f64;
        if weight <= ta.min(tb) {
            forest.union(ra, rb, weight);
        }
    }
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra != rb && (forest.size[ra] < min_size || forest.size[rb] < min_size) {
            forest.union(ra, rb, weight);
        }
    }
    let mut label_of_root = vec![usize::MAX; w * h];
    let mut labels = vec![0; w * h];
    let mut n = 0;
    for (i, label) in labels.iter_mut().enumerate() {
        let r = forest.find(i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = n;
            n += 1;
        }
        *label = label_of_root[r];
    }
    (labels, n)
}

fn gaussian_smooth(image: &Image, sigma: f64) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = kernel.iter().sum();
    let src: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc / norm;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc / norm;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Region {
    size: usize,
    color: [f64; 3],
    bounds: [usize; 4],
    alive: bool,
}

impl Region {
    fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x0: self.bounds[0] as f64,
            y0: self.bounds[1] as f64,
            x1: self.bounds[2] as f64,
            y1: self.bounds[3] as f64,
        }
    }

    fn merged(&self, other: &Region) -> Region {
        let n = (self.size + other.size) as f64;
        let color = core::array::from_fn(|c| {
            (self.color[c] * self.size as f64 + other.color[c] * other.size as f64) / n
        });
        Region {
            size: self.size + other.size,
            color,
            bounds: [
                self.bounds[0].min(other.bounds[0]),
                self.bounds[1].min(other.bounds[1]),
                self.bounds[2].max(other.bounds[2]),
                self.bounds[3].max(other.bounds[3]),
            ],
            alive: true,
        }
    }
}

/// Merge priority: colour closeness, small combined size, compact union box.
fn similarity(a: &Region, b: &Region, image_area: f64) -> f64 {
    let color_dist = libm::sqrt((0..3).map(|c| (a.color[c] - b.color[c]) * (a.color[c] - b.color[c])).sum::<f64>()) / 441.7;
    let size = 1.0 - (a.size + b.size) as f64 / image_area;
    let u = a.merged(b);
    let fill = 1.0 - (u.bbox().area() - a.size as f64 - b.size as f64) / image_area;
    (1.0 - color_dist) + size + fill
}

fn segmentation_candidates(image: &Image, cfg: &ProposalGeneratorConfig) -> Vec<(BoundingBox, f64)> {
    let (w, h) = (image.width(), image.height());
    let image_area = (w * h) as f64;
    let min_size = ((image_area * cfg.min_box_fraction) / 8.0).max(4.0) as usize;
    let (labels, n) = felzenszwalb(image, 150.0, min_size);
    let mut regions: Vec<Region> = (0..n)
        .map(|_| Region { size: 0, color: [0.0; 3], bounds: [usize::MAX, usize::MAX, 0, 0], alive: true })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let r = &mut regions[labels[y * w + x]];
            let p = image.pixel(x, y);
            r.size += 1;
            for c in 0..3 {
                r.color[c] += p[c] as f64;
            }
            r.bounds[0] = r.bounds[0].min(x);
            r.bounds[1] = r.bounds[1].min(y);
            r.bounds[2] = r.bounds[2].max(x + 1);
            r.bounds[3] = r.bounds[3].max(y + 1);
        }
    }
    for r in &mut regions {
        for c in 0..3 {
            r.color[c] /= r.size as f64;
        }
    }
    let mut neighbours: BTreeSet<(usize, usize)> = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = labels[y * w + x];
            if x + 1 < w && labels[y * w + x + 1] != a {
                let b = labels[y * w + x + 1];
                neighbours.insert((a.min(b), a.max(b)));
            }
            if y + 1 < h && labels[(y + 1) * w + x] != a {
                let b = labels[(y + 1) * w + x];
                neighbours.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut out = Vec::new();
    let mut push = |r: &Region| {
        let b = r.bbox();
        if area_ok(&b, image_area, cfg) {
            out.push((b, r.size as f64 / b.area()));
        }
    };
    regions.iter().for_each(&mut push);
    while let Some(&(a, b)) = neighbours.iter().max_by(|p, q| {
        similarity(&regions[p.0], &regions[p.1], image_area)
            .total_cmp(&similarity(&regions[q.0], &regions[q.1], image_area))
            .then(q.cmp(p))
    }) {
        let merged = regions[a].merged(&regions[b]);
        regions[a].alive = false;
        regions[b].alive = false;
        let id = regions.len();
        push(&merged);
        regions.push(merged);
        let touching: Vec<(usize, usize)> = neighbours
            .iter()
            .filter(|&&(p, q)| p == a || p == b || q == a || q == b)
            .copied()
            .collect();
        for pair in touching {
            neighbours.remove(&pair);
            let other = if pair.0 == a || pair.0 == b { pair.1 } else { pair.0 };
            if other != a && other != b && regions[other].alive {
                neighbours.insert((other.min(id), other.max(id)));
            }
        }
    }
    out
}

/// Drops proposals whose width/height ratio is `>= 3` or `<= 1/3`.
pub fn filter_aspect_ratio(proposals: Vec<Proposal>) -> Vec<Proposal> {
    proposals
        .into_iter()
        .filter(|p| {
            let ar = p.bbox.aspect_ratio();
            ar < 3.0 && ar > 1.0 / 3.0
        })
        .collect()
}

/// Uniform random choice of one proposal.
pub fn select_one<R: Rng + ?Sized>(proposals: &[Proposal], rng: &mut R) -> Result<Proposal> {
    proposals.choose(rng).cloned().ok_or(Error::NoProposal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn square_image() -> (Image, BoundingBox) {
        let mut img = Image::filled(64, 64, [120, 120, 120]);
        for y in 20..36 {
            for x in 24..40 {
                img.set_pixel(x, y, [250, 30, 30]);
            }
        }
        (img, BoundingBox::new(24.0, 20.0, 40.0, 36.0).unwrap())
    }

    fn prop(w: f64, h: f64) -> Proposal {
        Proposal { bbox: BoundingBox::new(0.0, 0.0, w, h).unwrap(), source_image_id: 0, score: 0.0 }
    }

    #[test]
    fn uniform_image_scores_tie() {
        let img = Image::filled(64, 64, [40, 80, 120]);
        let cfg = ProposalGeneratorConfig { strategy: ProposalStrategy::EnergySampler, ..Default::default() };
        let props = generate_proposals(&img, 1, &cfg, &mut seeded(1)).unwrap();
        assert!(!props.is_empty());
        assert!(props.iter().all(|p| p.score == props[0].score));
        let other = generate_proposals(&img, 1, &cfg, &mut seeded(2)).unwrap();
        assert_ne!(props, other, "ties are broken by the random source");
    }

    #[test]
    fn top_proposal_finds_the_square() {
        let (img, square) = square_image();
        for strategy in [ProposalStrategy::EnergySampler, ProposalStrategy::GraphSegmentation] {
            let cfg = ProposalGeneratorConfig { strategy, ..Default::default() };
            let props = generate_proposals(&img, 7, &cfg, &mut seeded(3)).unwrap();
            let top = &props[0];
            assert!(iou(&top.bbox, &square).unwrap() >= 0.5, "{strategy:?}: {:?}", top.bbox);
            assert!(props.iter().all(|p| p.source_image_id == 7));
        }
    }

    #[test]
    fn zero_candidates_is_empty() {
        let (img, _) = square_image();
        let cfg = ProposalGeneratorConfig { candidates_per_image: 0, ..Default::default() };
        assert!(generate_proposals(&img, 0, &cfg, &mut seeded(1)).unwrap().is_empty());
    }

    #[test]
    fn tiny_image_yields_nothing() {
        let img = Image::filled(1, 1, [0, 0, 0]);
        for strategy in [ProposalStrategy::EnergySampler, ProposalStrategy::GraphSegmentation] {
            let cfg = ProposalGeneratorConfig { strategy, ..Default::default() };
            assert!(generate_proposals(&img, 0, &cfg, &mut seeded(1)).unwrap().is_empty());
        }
        assert!(generate_proposals(&Image::new(0, 0), 0, &Default::default(), &mut seeded(1)).is_err());
    }

    #[test]
    fn outputs_respect_bounds_and_area() {
        let (img, _) = square_image();
        for strategy in [ProposalStrategy::EnergySampler, ProposalStrategy::GraphSegmentation] {
            let cfg = ProposalGeneratorConfig { strategy, ..Default::default() };
            let props = generate_proposals(&img, 0, &cfg, &mut seeded(9)).unwrap();
            assert!(props.len() <= cfg.candidates_per_image);
            for p in props {
                p.bbox.validate().unwrap();
                assert!(p.bbox.is_inside(64.0, 64.0));
                let frac = p.bbox.area() / 4096.0;
                assert!((cfg.min_box_fraction..=cfg.max_box_fraction).contains(&frac));
            }
        }
    }

    #[test]
    fn aspect_filter_boundaries() {
        let kept = filter_aspect_ratio(vec![prop(30.0, 10.0), prop(10.0, 10.0), prop(3.0, 10.0), prop(10.0, 30.0), prop(29.0, 10.0)]);
        let ratios: Vec<f64> = kept.iter().map(|p| p.bbox.aspect_ratio()).collect();
        assert_eq!(ratios, vec![1.0, 2.9]);
    }

    #[test]
    fn select_one_cases() {
        let only = vec![prop(4.0, 5.0)];
        assert_eq!(select_one(&only, &mut seeded(1)).unwrap(), only[0]);
        let many: Vec<_> = (1..8).map(|i| prop(i as f64, 4.0)).collect();
        assert_eq!(select_one(&many, &mut seeded(5)).unwrap(), select_one(&many, &mut seeded(5)).unwrap());
        assert_eq!(select_one(&[], &mut seeded(1)), Err(Error::NoProposal));
    }

    #[test]
    fn select_one_is_uniform() {
        for n in 1..=10usize {
            let list: Vec<_> = (0..n).map(|i| prop(1.0 + i as f64, 4.0)).collect();
            let mut counts = vec![0usize; n];
            for seed in 0..10_000u64 {
                let p = select_one(&list, &mut seeded(seed)).unwrap();
                counts[(p.bbox.width() - 1.0) as usize] += 1;
            }
            for c in counts {
                let freq = c as f64 / 10_000.0;
                assert!((freq - 1.0 / n as f64).abs() <= 0.05, "n={n}: {freq}");
            }
        }
    }

    #[test]
    fn filter_sweep_ten_thousand_boxes() {
        let mut rng = seeded(77);
        let props: Vec<Proposal> =
            (0..10_000).map(|_| prop(rng.gen_range(0.5..60.0), rng.gen_range(0.5..60.0))).collect();
        let kept = filter_aspect_ratio(props.clone());
        let expected: Vec<&Proposal> =
            props.iter().filter(|p| 3.0 * p.bbox.width() > p.bbox.height() && p.bbox.width() < 3.0 * p.bbox.height()).collect();
        assert_eq!(kept.iter().collect::<Vec<_>>(), expected);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn filter_never_keeps_extreme_ratios(dims in proptest::collection::vec((0.1f64..100.0, 0.1f64..100.0), 0..200)) {
                let props: Vec<Proposal> = dims.iter().map(|&(w, h)| prop(w, h)).collect();
                let n = props.len();
                let kept = filter_aspect_ratio(props);
                prop_assert!(kept.len() <= n);
                for p in kept {
                    let ar = p.bbox.aspect_ratio();
                    prop_assert!(ar < 3.0 && ar > 1.0 / 3.0);
                }
            }

            #[test]
            fn generated_boxes_are_valid(seed in 0u64..1000, w in 8usize..48, h in 8usize..48, graph in any::<bool>()) {
                let mut rng = seeded(seed);
                let data: Vec<u8> = (0..w * h * 3).map(|_| rand::Rng::gen(&mut rng)).collect();
                let img = Image::from_raw(w, h, data).unwrap();
                let strategy = if graph { ProposalStrategy::GraphSegmentation } else { ProposalStrategy::EnergySampler };
                let cfg = ProposalGeneratorConfig { strategy, ..Default::default() };
                let area = (w * h) as f64;
                for p in generate_proposals(&img, 0, &cfg, &mut rng).unwrap() {
                    prop_assert!(p.bbox.validate().is_ok());
                    prop_assert!(p.bbox.is_inside(w as f64, h as f64));
                    let frac = p.bbox.area() / area;
                    prop_assert!(frac >= cfg.min_box_fraction - 1e-12 && frac <= cfg.max_box_fraction + 1e-12);
                }
            }
        }
    }
}
