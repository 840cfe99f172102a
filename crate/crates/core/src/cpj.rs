//! Copy-paste-jitter view synthesis.
//!
//! A foreground crop is resized and hard-pasted onto a background drawn from a
//! set of pools; the paste rectangle, jittered under an IoU floor, becomes the
//! view's box. A [`ViewSet`] carries one query view and `n_keys` key views of
//! the same crop.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::{jitter_box, BoundingBox, JitterConfig};
use crate::image::Image;
use crate::proposals::Proposal;

/// Background draws per view before the foreground is skipped.
pub const MAX_BACKGROUND_RETRIES: usize = 5;
/// Smallest pasted side in pixels.
pub const MIN_PASTE_SIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolRole {
    PretrainLike,
    DownstreamLikeA,
    DownstreamLikeB,
}

impl PoolRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolRole::PretrainLike => "pretrain_like",
            PoolRole::DownstreamLikeA => "downstream_like_A",
            PoolRole::DownstreamLikeB => "downstream_like_B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrain_like" => Some(PoolRole::PretrainLike),
            "downstream_like_A" => Some(PoolRole::DownstreamLikeA),
            "downstream_like_B" => Some(PoolRole::DownstreamLikeB),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPool {
    pub pool_id: u32,
    pub role: PoolRole,
    images: Vec<Image>,
}

impl BackgroundPool {
    pub fn new(pool_id: u32, role: PoolRole, images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidConfig(alloc::format!("background pool {pool_id} is empty")));
        }
        if images.iter().any(Image::is_empty) {
            return Err(Error::InvalidConfig(alloc::format!("background pool {pool_id} holds an empty image")));
        }
        Ok(Self { pool_id, role, images })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blend {
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasteConfig {
    /// Pasted short side as a fraction of the background short side.
    pub scale_range: (f64, f64),
    /// Multiplier applied to the crop's aspect ratio.
    pub aspect_jitter_range: (f64, f64),
    pub blend: Blend,
}

impl Default for PasteConfig {
    fn default() -> Self {
        Self { scale_range: (0.3, 0.8), aspect_jitter_range: (3.0 / 4.0, 4.0 / 3.0), blend: Blend::Hard }
    }
}

impl PasteConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig("paste scale_range must lie within (0, 1] with min <= max".into()));
        }
        let (alo, ahi) = self.aspect_jitter_range;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return Err(Error::InvalidConfig("paste aspect_jitter_range must be positive with min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricConfig {
    pub color_jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub flip_prob: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            color_jitter_prob: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            // corpus instances differ mostly by hue, so rotating it blurs identity
            hue: 0.0,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            flip_prob: 0.5,
        }
    }
}

impl PhotometricConfig {
    pub fn disabled() -> Self {
        Self { color_jitter_prob: 0.0, grayscale_prob: 0.0, blur_prob: 0.0, flip_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.color_jitter_prob, self.grayscale_prob, self.blur_prob, self.flip_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        if [self.brightness, self.contrast, self.saturation].iter().any(|v| !(0.0..=1.0).contains(v))
            || !(0.0..=0.5).contains(&self.hue)
        {
            return Err(Error::InvalidConfig("color jitter strengths out of range".into()));
        }
        if !(self.blur_sigma.0 > 0.0 && self.blur_sigma.0 <= self.blur_sigma.1) {
            return Err(Error::InvalidConfig("blur sigma range must be positive with min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    pub bbox: BoundingBox,
    pub pool_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub foreground_id: u64,
    /// Checksum of the foreground crop every view was pasted from.
    pub crop_checksum: u64,
    pub query: View,
    pub keys: Vec<View>,
}

impl ViewSet {
    pub fn n_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn views(&self) -> impl Iterator<Item = &View> {
        core::iter::once(&self.query).chain(self.keys.iter())
    }
}

/// A pasted composite before jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub image: Image,
    pub paste_rect: BoundingBox,
    pub bbox: BoundingBox,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Pastes `crop` onto `background` and jitters the resulting rectangle.
pub fn cpj<R: Rng + ?Sized>(
    crop: &Image,
    background: &Image,
    paste: &PasteConfig,
    jitter: &JitterConfig,
    rng: &mut R,
) -> Result<(Image, BoundingBox)> {
    cpj_detailed(crop, background, paste, jitter, rng).map(|c| (c.image, c.bbox))
}

/// Like [`cpj`] but also reports the paste rectangle.
pub fn cpj_detailed<R: Rng + ?Sized>(
    crop: &Image,
    background: &Image,
    paste: &PasteConfig,
    jitter: &JitterConfig,
    rng: &mut R,
) -> Result<Composite> {
    if crop.is_empty() || background.is_empty() {
        return Err(invalid("cpj needs a non-empty crop and background"));
    }
    let (bw, bh) = (background.width(), background.height());
    let short = bw.min(bh) as f64;
    if libm::floor(paste.scale_range.0 * short) < MIN_PASTE_SIDE as f64 {
        return Err(Error::SkipSample(alloc::format!("background {bw}x{bh} is too small for a paste")));
    }
    let scale = uniform(rng, paste.scale_range);
    let aspect = crop.width() as f64 / crop.height() as f64 * uniform(rng, paste.aspect_jitter_range);
    let side = scale * short;
    let (mut w, mut h) = if aspect >= 1.0 { (side * aspect, side) } else { (side, side / aspect) };
    // keep the jittered aspect and shrink until it fits
    let fit = (bw as f64 / w).min(bh as f64 / h).min(1.0);
    w *= fit;
    h *= fit;
    let (pw, ph) = (libm::round(w) as usize, libm::round(h) as usize);
    let (pw, ph) = (pw.clamp(1, bw), ph.clamp(1, bh));
    if pw < MIN_PASTE_SIDE || ph < MIN_PASTE_SIDE {
        return Err(Error::SkipSample(alloc::format!("paste of {pw}x{ph} is too small")));
    }
    let resized = crop.resize_bilinear(pw, ph)?;
    let x = rng.gen_range(0..=bw - pw);
    let y = rng.gen_range(0..=bh - ph);
    let mut image = background.clone();
    match paste.blend {
        Blend::Hard => image.paste(&resized, x, y)?,
    }
    let paste_rect = BoundingBox { x0: x as f64, y0: y as f64, x1: (x + pw) as f64, y1: (y + ph) as f64 };
    let bbox = jitter_box(&paste_rect, jitter, (bw as f64, bh as f64), rng);
    Ok(Composite { image, paste_rect, bbox })
}

/// Draws a pool uniformly, then an image uniformly within it.
pub fn draw_background<'a, R: Rng + ?Sized>(pools: &'a [BackgroundPool], rng: &mut R) -> Result<(&'a Image, u32)> {
    if pools.is_empty() {
        return Err(invalid("no background pools configured"));
    }
    let pool = &pools[rng.gen_range(0..pools.len())];
    if pool.images.is_empty() {
        return Err(Error::InvalidConfig(alloc::format!("background pool {} is empty", pool.pool_id)));
    }
    Ok((&pool.images[rng.gen_range(0..pool.images.len())], pool.pool_id))
}

/// Identity of a pool set, order-insensitive.
fn pool_ids(pools: &[BackgroundPool]) -> Vec<u32> {
    let mut ids: Vec<u32> = pools.iter().map(|p| p.pool_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Checks that query and key views may draw from the same pools.
pub fn check_eligibility(query: &[BackgroundPool], keys: &[BackgroundPool]) -> Result<()> {
    if pool_ids(query) != pool_ids(keys) {
        return Err(Error::InvalidConfig("query and key background pools must be the same set".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ViewConfig {
    pub paste: PasteConfig,
    pub jitter: JitterConfig,
    pub photometric: PhotometricConfig,
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        self.paste.validate()?;
        self.jitter.validate()?;
        self.photometric.validate()
    }
}

/// Builds one query view and `n_keys` key views of `proposal`.
pub fn build_viewset<R: Rng + ?Sized>(
    proposal: &Proposal,
    source: &Image,
    pools: &[BackgroundPool],
    n_keys: usize,
    cfg: &ViewConfig,
    rng: &mut R,
) -> Result<ViewSet> {
    build_viewset_split(proposal, source, pools, pools, n_keys, cfg, rng)
}

/// [`build_viewset`] with separate query and key pool sets.
///
/// Regular pretraining must use matched sets (see [`check_eligibility`]);
/// the split form exists for the mismatched-pool ablation.
pub fn build_viewset_split<R: Rng + ?Sized>(
    proposal: &Proposal,
    source: &Image,
    query_pools: &[BackgroundPool],
    key_pools: &[BackgroundPool],
    n_keys: usize,
    cfg: &ViewConfig,
    rng: &mut R,
) -> Result<ViewSet> {
    if n_keys != 1 && n_keys != 3 {
        return Err(invalid(alloc::format!("n_keys must be 1 or 3, got {n_keys}")));
    }
    cfg.validate()?;
    let crop = source.crop_box(&proposal.bbox)?;
    let crop_checksum = crop.checksum();
    let make_view = |pools: &[BackgroundPool], rng: &mut R| -> Result<View> {
        let mut last = None;
        for _ in 0..MAX_BACKGROUND_RETRIES {
            let (background, pool_id) = draw_background(pools, rng)?;
            match cpj(&crop, background, &cfg.paste, &cfg.jitter, rng) {
                Ok((image, bbox)) => {
                    let (image, flipped) = photometric_augment(&image, &cfg.photometric, rng);
                    let bbox = if flipped { bbox.flip_horizontal(image.width() as f64) } else { bbox };
                    return Ok(View { image, bbox, pool_id });
                }
                Err(e @ Error::SkipSample(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::SkipSample("no background accepted the paste".into())))
    };
    let query = make_view(query_pools, rng)?;
    let keys = (0..n_keys).map(|_| make_view(key_pools, rng)).collect::<Result<Vec<_>>>()?;
    Ok(ViewSet { foreground_id: proposal.source_image_id, crop_checksum, query, keys })
}

/// Colour jitter, grayscale, blur and horizontal flip, each with its own
/// probability. Returns the image and whether it was flipped; the caller
/// mirrors any box through [`BoundingBox::flip_horizontal`].
pub fn photometric_augment<R: Rng + ?Sized>(image: &Image, cfg: &PhotometricConfig, rng: &mut R) -> (Image, bool) {
    let mut px: Vec<[f32; 3]> = image
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    let mut touched = false;
    if rng.gen_bool(cfg.color_jitter_prob) {
        let b = uniform(rng, (1.0 - cfg.brightness, 1.0 + cfg.brightness)) as f32;
        let c = uniform(rng, (1.0 - cfg.contrast, 1.0 + cfg.contrast)) as f32;
        let s = uniform(rng, (1.0 - cfg.saturation, 1.0 + cfg.saturation)) as f32;
        let h = uniform(rng, (-cfg.hue, cfg.hue)) as f32;
        for p in px.iter_mut() {
            *p = p.map(|v| (v * b).clamp(0.0, 1.0));
        }
        let mean = px.iter().map(|p| gray(*p)).sum::<f32>() / px.len() as f32;
        for p in px.iter_mut() {
            *p = p.map(|v| (mean + c * (v - mean)).clamp(0.0, 1.0));
            let g = gray(*p);
            *p = p.map(|v| (g + s * (v - g)).clamp(0.0, 1.0));
            if h != 0.0 {
                *p = shift_hue(*p, h);
            }
        }
        touched = true;
    }
    if rng.gen_bool(cfg.grayscale_prob) {
        for p in px.iter_mut() {
            let g = gray(*p);
            *p = [g, g, g];
        }
        touched = true;
    }
    if rng.gen_bool(cfg.blur_prob) {
        let sigma = uniform(rng, cfg.blur_sigma) as f32;
        px = blur(&px, image.width(), image.height(), sigma);
        touched = true;
    }
    let mut out = if touched {
        let data = px
            .iter()
            .flat_map(|p| p.map(|v| libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8))
            .collect();
        Image::from_raw(image.width(), image.height(), data).expect("dimensions unchanged")
    } else {
        image.clone()
    };
    let flipped = rng.gen_bool(cfg.flip_prob);
    if flipped {
        out = out.flip_horizontal();
    }
    (out, flipped)
}

fn gray(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Rotates hue by `delta` turns through HSV.
fn shift_hue(p: [f32; 3], delta: f32) -> [f32; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma <= 0.0 {
        return p;
    }
    let hue = if max == r {
        wrap((g - b) / chroma, 6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    let hue = wrap(hue / 6.0 + delta, 1.0) * 6.0;
    let x = chroma * (1.0 - libm::fabsf(wrap(hue, 2.0) - 1.0));
    let (r1, g1, b1) = match hue as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = max - chroma;
    [r1 + m, g1 + m, b1 + m]
}

fn wrap(x: f32, m: f32) -> f32 {
    x - m * libm::floorf(x / m)
}

fn blur(px: &[[f32; 3]], w: usize, h: usize, sigma: f32) -> Vec<[f32; 3]> {
    let radius = libm::ceilf(3.0 * sigma) as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| libm::expf(-((i * i) as f32) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f32 = kernel.iter().sum();
    let pass = |src: &[[f32; 3]], horizontal: bool| -> Vec<[f32; 3]> {
        let mut out = alloc::vec![[0.0f32; 3]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (k, kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let idx = if horizontal {
                        y * w + (x as isize + off).clamp(0, w as isize - 1) as usize
                    } else {
                        (y as isize + off).clamp(0, h as isize - 1) as usize * w + x
                    };
                    for c in 0..3 {
                        acc[c] += kv * src[idx][c];
                    }
                }
                out[y * w + x] = acc.map(|v| v / norm);
            }
        }
        out
    };
    pass(&pass(px, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::rng::seeded;

    fn textured(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = seeded(seed);
        Image::from_raw(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    fn pools(k: u32) -> Vec<BackgroundPool> {
        (0..k)
            .map(|i| {
                let images = (0..(i as u64 + 1) * 3).map(|j| textured(64, 64, 100 * i as u64 + j)).collect();
                BackgroundPool::new(i, PoolRole::PretrainLike, images).unwrap()
            })
            .collect()
    }

    fn proposal() -> Proposal {
        Proposal { bbox: BoundingBox::new(8.0, 10.0, 40.0, 34.0).unwrap(), source_image_id: 42, score: 1.0 }
    }

    #[test]
    fn half_scale_on_square_background() {
        let crop = textured(20, 20, 1);
        let bg = textured(128, 128, 2);
        let paste = PasteConfig { scale_range: (0.5, 0.5), aspect_jitter_range: (1.0, 1.0), blend: Blend::Hard };
        let c = cpj_detailed(&crop, &bg, &paste, &JitterConfig::default(), &mut seeded(3)).unwrap();
        assert_eq!((c.paste_rect.width(), c.paste_rect.height()), (64.0, 64.0));
        assert!(c.bbox.is_inside(128.0, 128.0));
        assert!(c.paste_rect.is_inside(128.0, 128.0));
    }

    #[test]
    fn tiny_background_is_skipped() {
        let crop = textured(20, 20, 1);
        let bg = textured(5, 5, 2);
        let r = cpj(&crop, &bg, &PasteConfig::default(), &JitterConfig::default(), &mut seeded(3));
        assert!(matches!(r, Err(Error::SkipSample(_))));
    }

    #[test]
    fn cpj_is_reproducible() {
        let crop = textured(17, 11, 1);
        let bg = textured(64, 48, 2);
        let a = cpj(&crop, &bg, &PasteConfig::default(), &JitterConfig::default(), &mut seeded(9)).unwrap();
        let b = cpj(&crop, &bg, &PasteConfig::default(), &JitterConfig::default(), &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ten_thousand_pastes_keep_the_iou_floor() {
        let jitter = JitterConfig::default();
        let crop = textured(13, 29, 5);
        let bgs = [textured(64, 64, 6), textured(96, 40, 7), textured(33, 80, 8)];
        let mut rng = seeded(10);
        for i in 0..10_000 {
            let bg = &bgs[i % 3];
            let c = cpj_detailed(&crop, bg, &PasteConfig::default(), &jitter, &mut rng).unwrap();
            let (w, h) = (bg.width() as f64, bg.height() as f64);
            assert!(c.bbox.is_inside(w, h) && c.bbox.width() > 0.0 && c.bbox.height() > 0.0);
            assert!(c.bbox == c.paste_rect || iou(&c.bbox, &c.paste_rect).unwrap() > 0.6);
            // pasted pixels are the resized crop
            let sub = c.image.crop_box(&c.paste_rect).unwrap();
            assert_eq!((sub.width() as f64, sub.height() as f64), (c.paste_rect.width(), c.paste_rect.height()));
        }
    }

    #[test]
    fn viewset_sizes() {
        let src = textured(64, 64, 11);
        let p = pools(3);
        let cfg = ViewConfig::default();
        let one = build_viewset(&proposal(), &src, &p, 1, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(one.views().count(), 2);
        let three = build_viewset(&proposal(), &src, &p, 3, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(three.views().count(), 4);
        for v in three.views() {
            assert!(v.bbox.is_inside(v.image.width() as f64, v.image.height() as f64));
        }
        assert_eq!(three.foreground_id, 42);
        assert_eq!(three.crop_checksum, src.crop_box(&proposal().bbox).unwrap().checksum());
        assert!(build_viewset(&proposal(), &src, &p, 2, &cfg, &mut seeded(1)).is_err());
    }

    #[test]
    fn views_share_the_crop_before_augmentation() {
        let src = textured(64, 64, 11);
        let cfg = ViewConfig {
            paste: PasteConfig { aspect_jitter_range: (1.0, 1.0), ..PasteConfig::default() },
            jitter: JitterConfig { max_center_shift: 0.0, max_scale_delta: 0.0, ..JitterConfig::default() },
            photometric: PhotometricConfig::disabled(),
        };
        let vs = build_viewset(&proposal(), &src, &pools(2), 3, &cfg, &mut seeded(4)).unwrap();
        let crop = src.crop_box(&proposal().bbox).unwrap();
        for v in vs.views() {
            let pasted = v.image.crop_box(&v.bbox).unwrap();
            let expected = crop.resize_bilinear(pasted.width(), pasted.height()).unwrap();
            assert_eq!(pasted.checksum(), expected.checksum());
        }
    }

    #[test]
    fn eligibility_must_match() {
        let p = pools(3);
        assert!(check_eligibility(&p, &p).is_ok());
        assert!(check_eligibility(&p[..1], &p[1..2]).is_err());
        let reversed: Vec<_> = p.iter().rev().cloned().collect();
        assert!(check_eligibility(&p, &reversed).is_ok());
    }

    #[test]
    fn split_pools_draw_from_their_own_sets() {
        let p = pools(2);
        let src = textured(64, 64, 11);
        let vs = build_viewset_split(&proposal(), &src, &p[..1], &p[1..], 3, &ViewConfig::default(), &mut seeded(2))
            .unwrap();
        assert_eq!(vs.query.pool_id, 0);
        assert!(vs.keys.iter().all(|k| k.pool_id == 1));
    }

    #[test]
    fn pool_draws_are_pool_uniform() {
        for k in 1..=3u32 {
            let p = pools(k);
            let mut counts = alloc::vec![0usize; k as usize];
            let mut rng = seeded(k as u64);
            for _ in 0..10_000 {
                counts[draw_background(&p, &mut rng).unwrap().1 as usize] += 1;
            }
            for c in counts {
                assert!((c as f64 / 10_000.0 - 1.0 / k as f64).abs() <= 0.03);
            }
        }
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let img = textured(31, 17, 3);
        let (out, flipped) = photometric_augment(&img, &PhotometricConfig::disabled(), &mut seeded(1));
        assert_eq!(out, img);
        assert!(!flipped);
    }

    #[test]
    fn flip_mirrors_box() {
        let cfg = PhotometricConfig { flip_prob: 1.0, ..PhotometricConfig::disabled() };
        let img = textured(100, 10, 3);
        let (out, flipped) = photometric_augment(&img, &cfg, &mut seeded(1));
        assert!(flipped);
        assert_eq!(out, img.flip_horizontal());
        let b = BoundingBox::new(10.0, 0.0, 20.0, 10.0).unwrap().flip_horizontal(100.0);
        assert_eq!(b.to_array(), [80.0, 0.0, 90.0, 10.0]);
    }

    #[test]
    fn augmentation_is_reproducible_and_keeps_size() {
        let img = textured(40, 24, 3);
        let cfg = PhotometricConfig {
            color_jitter_prob: 1.0,
            grayscale_prob: 0.5,
            blur_prob: 1.0,
            ..PhotometricConfig::default()
        };
        let a = photometric_augment(&img, &cfg, &mut seeded(6));
        let b = photometric_augment(&img, &cfg, &mut seeded(6));
        assert_eq!(a, b);
        assert_eq!((a.0.width(), a.0.height()), (40, 24));
        assert_ne!(a.0, img);
    }

    #[test]
    fn grayscale_equalises_channels() {
        let cfg = PhotometricConfig { grayscale_prob: 1.0, ..PhotometricConfig::disabled() };
        let (out, _) = photometric_augment(&textured(8, 8, 1), &cfg, &mut seeded(1));
        assert!(out.data().chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn hue_rotation_round_trips() {
        let mut rng = seeded(5);
        for _ in 0..1000 {
            let p = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
            let q = shift_hue(shift_hue(p, 0.3), -0.3);
            assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-5), "{p:?} vs {q:?}");
            assert_eq!(shift_hue(p, 0.0).map(|v| (v * 1e4).round()), p.map(|v| (v * 1e4).round()));
        }
    }

    #[test]
    fn pool_rejects_empty() {
        assert!(BackgroundPool::new(0, PoolRole::PretrainLike, Vec::new()).is_err());
        assert_eq!(PoolRole::parse("downstream_like_B"), Some(PoolRole::DownstreamLikeB));
        assert_eq!(PoolRole::parse(PoolRole::PretrainLike.as_str()), Some(PoolRole::PretrainLike));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn emitted_boxes_stay_inside(seed in 0u64..10_000, bw in 8usize..96, bh in 8usize..96, cw in 1usize..40, ch in 1usize..40) {
                let crop = textured(cw, ch, seed);
                let bg = textured(bw, bh, seed + 1);
                let mut rng = seeded(seed);
                match cpj_detailed(&crop, &bg, &PasteConfig::default(), &JitterConfig::default(), &mut rng) {
                    Ok(c) => {
                        prop_assert!(c.bbox.is_inside(bw as f64, bh as f64));
                        prop_assert!(c.bbox == c.paste_rect || iou(&c.bbox, &c.paste_rect).unwrap() > 0.6);
                    }
                    Err(e) => prop_assert!(matches!(e, Error::SkipSample(_))),
                }
            }
        }
    }
}
