//! Procedural detection corpus: parametric glyphs on three texture families.
//!
//! Every foreground instance (class, colour, size) is rendered once per
//! background pool, so the same object appears on several backgrounds while
//! class identity stays independent of the pool by construction. Image `i`
//! has class `i % n_classes`, which keeps the class histogram balanced to
//! within one image for any corpus size.

use alloc::vec::Vec;

use rand::Rng;

use crate::cpj::PoolRole;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Image;
use crate::rng::stream;

pub const GLYPH_NAMES: [&str; 10] =
    ["disk", "square", "triangle", "ring", "plus", "diamond", "ell", "cross", "frame", "bars"];

pub const POOL_ROLES: [PoolRole; 3] = [PoolRole::PretrainLike, PoolRole::DownstreamLikeA, PoolRole::DownstreamLikeB];

// rng stream tags
const STREAM_FOREGROUND: u64 = 1;
const STREAM_PLACEMENT: u64 = 2;
const STREAM_BACKGROUND: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusConfig {
    pub n_foreground_classes: usize,
    pub n_images: usize,
    pub image_size: usize,
    /// Backgrounds generated per texture pool.
    pub backgrounds_per_pool: usize,
    /// Glyph side as a fraction of the image side.
    pub glyph_scale: (f64, f64),
    /// Every `test_every`-th block of foregrounds (one per class) is held out,
    /// so each class appears in both splits.
    pub test_every: u64,
    /// Render training-split images on the pretrain-like pool only, so the
    /// other texture families are seen in pretraining only as paste backgrounds.
    pub train_on_pretrain_pool: bool,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_foreground_classes: 10,
            n_images: 6000,
            image_size: 64,
            backgrounds_per_pool: 64,
            glyph_scale: (0.35, 0.6),
            test_every: 5,
            train_on_pretrain_pool: true,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn n_pools(&self) -> usize {
        POOL_ROLES.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(1..=GLYPH_NAMES.len()).contains(&self.n_foreground_classes) {
            errors.push(alloc::format!("n_foreground_classes must be in 1..={}", GLYPH_NAMES.len()));
        }
        if self.image_size < 32 || self.image_size % 32 != 0 {
            errors.push("image_size must be a positive multiple of 32".into());
        }
        if self.backgrounds_per_pool == 0 {
            errors.push("backgrounds_per_pool must be >= 1".into());
        }
        let (lo, hi) = self.glyph_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 0.9) {
            errors.push("glyph_scale must satisfy 0 < min <= max <= 0.9".into());
        }
        if self.test_every < 2 {
            errors.push("test_every must be >= 2".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Ground truth for one corpus image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: u64,
    pub class_id: usize,
    pub foreground_id: u64,
    pub pool_id: u32,
    pub background_index: usize,
    pub bbox: BoundingBox,
    pub split: Split,
}

/// Where image `index` sits in the (foreground, render) layout.
pub fn layout(index: u64, n_classes: usize, n_pools: usize) -> (u64, usize, u32) {
    let k = n_classes as u64;
    let block = index / (k * n_pools as u64);
    let class = (index % k) as usize;
    let render = (index / k) % n_pools as u64;
    let foreground = block * k + class as u64;
    let pool = ((foreground + render) % n_pools as u64) as u32;
    (foreground, class, pool)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GlyphStyle {
    color: [u8; 3],
    side: usize,
}

fn foreground_style(cfg: &SyntheticCorpusConfig, foreground: u64) -> GlyphStyle {
    let mut rng = stream(cfg.seed ^ foreground.wrapping_mul(0x9E37_79B9_7F4A_7C15), STREAM_FOREGROUND);
    let hue = rng.gen_range(0.0..1.0);
    let value = rng.gen_range(0.65..1.0);
    let color = hsv_to_rgb(hue, 0.85, value);
    let scale = rng.gen_range(cfg.glyph_scale.0..=cfg.glyph_scale.1);
    let side = (libm::round(scale * cfg.image_size as f64) as usize).max(4);
    GlyphStyle { color, side }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h * 6.0;
    let i = libm::floor(h6) as i64 % 6;
    let f = h6 - libm::floor(h6);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| libm::round(c * 255.0) as u8)
}

/// Shape predicate in normalised coordinates `u, v ∈ [-1, 1]`.
pub fn glyph_contains(class: usize, u: f64, v: f64) -> bool {
    let (au, av) = (libm::fabs(u), libm::fabs(v));
    match class {
        0 => u * u + v * v <= 1.0,
        1 => au <= 1.0 && av <= 1.0,
        2 => v <= 1.0 && au <= (v + 1.0) / 2.0,
        3 => {
            let r = u * u + v * v;
            (0.3..=1.0).contains(&r)
        }
        4 => au <= 0.35 || av <= 0.35,
        5 => au + av <= 1.0,
        6 => u <= -0.3 || v >= 0.3,
        7 => libm::fabs(au - av) <= 0.35,
        8 => au.max(av) >= 0.55,
        9 => (libm::floor((v + 1.0) * 2.5) as i64) % 2 == 0,
        _ => false,
    }
}

/// Renders a glyph mask of `side × side` (row-major booleans).
pub fn glyph_mask(class: usize, side: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let u = 2.0 * (x as f64 + 0.5) / side as f64 - 1.0;
            // image rows grow downwards, glyph v grows upwards
            let v = 1.0 - 2.0 * (y as f64 + 0.5) / side as f64;
            mask.push(glyph_contains(class, u, v));
        }
    }
    mask
}

/// Tight pixel bounds `(x0, y0, x1, y1)` of a mask, exclusive at the far edge.
pub fn mask_extent(mask: &[bool], side: usize) -> Option<(usize, usize, usize, usize)> {
    let mut ext: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (x, y) = (i % side, i / side);
        ext = Some(match ext {
            None => (x, y, x + 1, y + 1),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
        });
    }
    ext
}

/// Texture for background `index` of the pool with `role`.
pub fn render_background(role: PoolRole, size: usize, seed: u64, index: usize) -> Image {
    let pool_tag = match role {
        PoolRole::PretrainLike => 0u64,
        PoolRole::DownstreamLikeA => 1,
        PoolRole::DownstreamLikeB => 2,
    };
    let mut rng = stream(seed ^ (pool_tag << 40) ^ index as u64, STREAM_BACKGROUND);
    let mut img = Image::new(size, size);
    let rand_color = |rng: &mut crate::rng::CodoRng| -> [f64; 3] { [0; 3].map(|_: u8| rng.gen_range(30.0..225.0)) };
    match role {
        PoolRole::PretrainLike => {
            // smooth two-colour gradient with a few soft blobs
            let (c0, c1) = (rand_color(&mut rng), rand_color(&mut rng));
            let angle = rng.gen_range(0.0..core::f64::consts::TAU);
            let (dx, dy) = (libm::cos(angle), libm::sin(angle));
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(0.0..size as f64),
                        rng.gen_range(0.0..size as f64),
                        rng.gen_range(0.15..0.35) * size as f64,
                        rand_color(&mut rng),
                    )
                })
                .collect();
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f64 / size as f64 - 0.5, y as f64 / size as f64 - 0.5);
                    let t = (fx * dx + fy * dy + 0.75) / 1.5;
                    let mut c: [f64; 3] = core::array::from_fn(|k| c0[k] * (1.0 - t) + c1[k] * t);
                    for &(bx, by, r, bc) in &blobs {
                        let (ddx, ddy) = (x as f64 - bx, y as f64 - by);
                        let d2 = (ddx * ddx + ddy * ddy) / (r * r);
                        let a = 0.6 * libm::exp(-d2);
                        for k in 0..3 {
                            c[k] = c[k] * (1.0 - a) + bc[k] * a;
                        }
                    }
                    img.set_pixel(x, y, c.map(|v| v.clamp(0.0, 255.0) as u8));
                }
            }
        }
        PoolRole::DownstreamLikeA => {
            // oriented stripes or a checkerboard
            let (c0, c1) = (rand_color(&mut rng), rand_color(&mut rng));
            let period = rng.gen_range(4.0..12.0);
            let checker = rng.gen_bool(0.5);
            let angle = rng.gen_range(0.0..core::f64::consts::PI);
            let (dx, dy) = (libm::cos(angle), libm::sin(angle));
            for y in 0..size {
                for x in 0..size {
                    let (xf, yf) = (x as f64, y as f64);
                    let a = libm::floor((xf * dx + yf * dy) / period) as i64;
                    let on = if checker {
                        let b = libm::floor((yf * dx - xf * dy) / period) as i64;
                        (a + b).rem_euclid(2) == 0
                    } else {
                        a.rem_euclid(2) == 0
                    };
                    img.set_pixel(x, y, if on { c0 } else { c1 }.map(|v| v as u8));
                }
            }
        }
        PoolRole::DownstreamLikeB => {
            // coloured speckle over block noise
            let base = rand_color(&mut rng);
            let cell = rng.gen_range(2..5usize);
            let cells = size.div_ceil(cell);
            let grid: Vec<f64> = (0..cells * cells).map(|_| rng.gen_range(-60.0..60.0)).collect();
            for y in 0..size {
                for x in 0..size {
                    let g = grid[(y / cell) * cells + x / cell];
                    let c: [f64; 3] = core::array::from_fn(|k| base[k] + g + rng.gen_range(-35.0..35.0));
                    img.set_pixel(x, y, c.map(|v| v.clamp(0.0, 255.0) as u8));
                }
            }
        }
    }
    img
}

/// Renders corpus image `index` and its ground truth.
pub fn render_image(cfg: &SyntheticCorpusConfig, index: u64) -> Result<(Image, Annotation)> {
    cfg.validate()?;
    let (foreground, class, pool) = layout(index, cfg.n_foreground_classes, cfg.n_pools());
    let split = if (foreground / cfg.n_foreground_classes as u64) % cfg.test_every == 0 { Split::Test } else { Split::Train };
    let pool = if cfg.train_on_pretrain_pool && split == Split::Train { 0 } else { pool };
    let style = foreground_style(cfg, foreground);
    let mut rng = stream(cfg.seed ^ index.wrapping_mul(0xD134_2543_DE82_EF95), STREAM_PLACEMENT);
    let background_index = rng.gen_range(0..cfg.backgrounds_per_pool);
    let mut img = render_background(POOL_ROLES[pool as usize], cfg.image_size, cfg.seed, background_index);
    let side = style.side.min(cfg.image_size);
    let x0 = rng.gen_range(0..=cfg.image_size - side);
    let y0 = rng.gen_range(0..=cfg.image_size - side);
    let mask = glyph_mask(class, side);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        img.set_pixel(x0 + i % side, y0 + i / side, style.color);
    }
    let (ex0, ey0, ex1, ey1) = mask_extent(&mask, side).expect("every glyph covers pixels");
    let bbox = BoundingBox {
        x0: (x0 + ex0) as f64,
        y0: (y0 + ey0) as f64,
        x1: (x0 + ex1) as f64,
        y1: (y0 + ey1) as f64,
    };
    Ok((img, Annotation { image_id: index, class_id: class, foreground_id: foreground, pool_id: pool, background_index, bbox, split }))
}
