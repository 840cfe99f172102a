//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Boxes use the half-open convention `[x0, x1) x [y0, y1)` so that a box
//! `(0, 0, w, h)` covers exactly the `w x h` pixel grid of an image, and the
//! same numbers feed IoU and RoIAlign without a +-1 correction.

use rand::Rng;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x0.is_finite() && self.y0.is_finite() && self.x1.is_finite() && self.y1.is_finite();
        if !finite {
            return Err(invalid("box has non-finite coordinates"));
        }
        if !(self.x1 > self.x0 && self.y1 > self.y0) {
            return Err(invalid(alloc::format!("degenerate box {:?}", self)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width && self.y1 <= height
    }

    /// Mirror through the vertical axis of an image of the given width.
    pub fn flip_horizontal(&self, image_width: f64) -> Self {
        Self {
            x0: image_width - self.x1,
            y0: self.y0,
            x1: image_width - self.x0,
            y1: self.y1,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            x0: self.x0 * factor,
            y0: self.y0 * factor,
            x1: self.x1 * factor,
            y1: self.y1 * factor,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Clamps `b` into `[0, width] x [0, height]`.
///
/// Fails when the box lies entirely outside the image or when clamping leaves
/// zero area.
pub fn clamp(b: &BoundingBox, width: f64, height: f64) -> Result<BoundingBox> {
    if !(width > 0.0 && height > 0.0) {
        return Err(invalid("clamp bounds must be positive"));
    }
    b.validate()?;
    let out = BoundingBox {
        x0: b.x0.clamp(0.0, width),
        y0: b.y0.clamp(0.0, height),
        x1: b.x1.clamp(0.0, width),
        y1: b.y1.clamp(0.0, height),
    };
    if !(out.x1 > out.x0 && out.y1 > out.y0) {
        return Err(invalid(alloc::format!(
            "box {:?} has no area inside {}x{}",
            b,
            width,
            height
        )));
    }
    Ok(out)
}

/// Parameters of the IoU-floored box jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterConfig {
    /// Candidates must exceed this IoU with the source box.
    pub iou_min: f64,
    /// Center shift is uniform in `+-max_center_shift * (w, h)`.
    pub max_center_shift: f64,
    /// Each side length is scaled by a uniform factor in `1 +- max_scale_delta`.
    pub max_scale_delta: f64,
    pub max_attempts: u32,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.6,
            max_center_shift: 0.2,
            max_scale_delta: 0.2,
            max_attempts: 20,
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min > 0.0 && self.iou_min < 1.0) {
            return Err(invalid("jitter iou_min must lie in (0, 1)"));
        }
        if self.max_attempts < 1 {
            return Err(invalid("jitter max_attempts must be >= 1"));
        }
        if !(self.max_center_shift >= 0.0 && self.max_scale_delta >= 0.0 && self.max_scale_delta < 1.0) {
            return Err(invalid("jitter magnitudes must be non-negative and scale delta < 1"));
        }
        Ok(())
    }

    /// Acceptance test for a jittered candidate: strictly above the IoU floor.
    pub fn accepts(&self, source: &BoundingBox, candidate: &BoundingBox) -> bool {
        matches!(iou(source, candidate), Ok(v) if v > self.iou_min)
    }
}

/// Rejection-sampled jitter of `b` inside `(width, height)`.
///
/// Returns `b` unchanged once `max_attempts` candidates have been rejected.
pub fn jitter_box<R: Rng + ?Sized>(
    b: &BoundingBox,
    cfg: &JitterConfig,
    bounds: (f64, f64),
    rng: &mut R,
) -> BoundingBox {
    let (width, height) = bounds;
    let (cx, cy) = b.center();
    let (w, h) = (b.width(), b.height());
    let shift = cfg.max_center_shift;
    let delta = cfg.max_scale_delta;
    for _ in 0..cfg.max_attempts {
        let dx = sample_symmetric(rng, shift) * w;
        let dy = sample_symmetric(rng, shift) * h;
        let sw = 1.0 + sample_symmetric(rng, delta);
        let sh = 1.0 + sample_symmetric(rng, delta);
        let (nw, nh) = (w * sw, h * sh);
        let (ncx, ncy) = (cx + dx, cy + dy);
        let raw = BoundingBox {
            x0: ncx - 0.5 * nw,
            y0: ncy - 0.5 * nh,
            x1: ncx + 0.5 * nw,
            y1: ncy + 0.5 * nh,
        };
        let Ok(candidate) = clamp(&raw, width, height) else {
            continue;
        };
        if cfg.accepts(b, &candidate) {
            return candidate;
        }
    }
    *b
}

fn sample_symmetric<R: Rng + ?Sized>(rng: &mut R, magnitude: f64) -> f64 {
    if magnitude > 0.0 {
        rng.gen_range(-magnitude..=magnitude)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Counts covered cells on a grid of `res` cells per pixel.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox, res: f64) -> f64 {
        let lo_x = a.x0.min(b.x0);
        let hi_x = a.x1.max(b.x1);
        let lo_y = a.y0.min(b.y0);
        let hi_y = a.y1.max(b.y1);
        let nx = ((hi_x - lo_x) * res).ceil() as usize;
        let ny = ((hi_y - lo_y) * res).ceil() as usize;
        let (mut inter, mut union) = (0u64, 0u64);
        for j in 0..ny {
            let y = lo_y + (j as f64 + 0.5) / res;
            for i in 0..nx {
                let x = lo_x + (i as f64 + 0.5) / res;
                let ia = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
                let ib = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)).unwrap(), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 30., 30.)).unwrap(), 0.0);
        let half = iou(&bb(0., 0., 10., 10.), &bb(5., 0., 15., 10.)).unwrap();
        let oracle = raster_iou(&bb(0., 0., 10., 10.), &bb(5., 0., 15., 10.), 20.0);
        // Frozen from the raster oracle: 50 / 150 cells.
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((half - oracle).abs() < 1e-9);
    }

    #[test]
    fn iou_rejects_degenerate() {
        let zero = BoundingBox { x0: 1.0, y0: 1.0, x1: 1.0, y1: 5.0 };
        assert!(iou(&zero, &bb(0., 0., 2., 2.)).is_err());
        assert!(BoundingBox::new(3.0, 0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp(&bb(-5., -5., 10., 10.), 100., 100.).unwrap(), bb(0., 0., 10., 10.));
        assert_eq!(clamp(&bb(10., 10., 20., 20.), 100., 100.).unwrap(), bb(10., 10., 20., 20.));
        assert_eq!(clamp(&bb(90., 90., 120., 120.), 100., 100.).unwrap(), bb(90., 90., 100., 100.));
        assert!(clamp(&bb(120., 0., 130., 10.), 100., 100.).is_err());
        assert!(clamp(&bb(0., 0., 1., 1.), 0., 100.).is_err());
    }

    #[test]
    fn candidate_below_floor_is_rejected() {
        let cfg = JitterConfig::default();
        let src = bb(0., 0., 10., 10.);
        // w = 10, shift t: IoU = (10 - t) / (10 + t) = 0.55  =>  t = 4.5 / 1.55.
        let t = 4.5 / 1.55;
        let cand = bb(t, 0., 10. + t, 10.);
        assert!((iou(&src, &cand).unwrap() - 0.55).abs() < 1e-12);
        assert!(!cfg.accepts(&src, &cand));
        let exact = bb(2.5, 0., 12.5, 10.); // IoU exactly 0.6, not strictly greater
        assert!((iou(&src, &exact).unwrap() - 0.6).abs() < 1e-12);
        assert!(!cfg.accepts(&src, &exact));
    }

    #[test]
    fn exhausted_attempts_return_input() {
        // An IoU floor no candidate can beat with large perturbations.
        let cfg = JitterConfig {
            iou_min: 0.999_999,
            max_center_shift: 0.5,
            max_scale_delta: 0.5,
            max_attempts: 5,
        };
        let src = bb(10., 10., 40., 30.);
        let out = jitter_box(&src, &cfg, (64., 64.), &mut seeded(3));
        assert_eq!(out, src);
    }

    #[test]
    fn jitter_is_reproducible() {
        let cfg = JitterConfig::default();
        let src = bb(10., 12., 40., 30.);
        let a = jitter_box(&src, &cfg, (64., 64.), &mut seeded(11));
        let b = jitter_box(&src, &cfg, (64., 64.), &mut seeded(11));
        assert_eq!(a, b);
        assert_ne!(a, src);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BoundingBox> {
            (0.0f64..50.0, 0.0f64..50.0, 0.5f64..40.0, 0.5f64..40.0)
                .prop_map(|(x, y, w, h)| BoundingBox::from_xywh(x, y, w, h).unwrap())
        }

        proptest! {
            #[test]
            fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = iou(&a, &b).unwrap();
                let ba = iou(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn jitter_respects_floor_and_bounds(a in arb_box(), seed in any::<u64>()) {
                let cfg = JitterConfig::default();
                let src = clamp(&a, 64.0, 64.0).unwrap();
                let out = jitter_box(&src, &cfg, (64.0, 64.0), &mut seeded(seed));
                prop_assert!(out == src || iou(&out, &src).unwrap() > cfg.iou_min);
                prop_assert!(out.is_inside(64.0, 64.0));
            }
        }
    }

    #[test]
    fn iou_matches_raster_oracle_on_random_pairs() {
        use rand::Rng;
        let mut rng = seeded(2024);
        for _ in 0..1000 {
            // Integer-aligned boxes on a 4x grid make the raster count exact up to the grid.
            let draw = |rng: &mut crate::rng::CodoRng| {
                let x0 = rng.gen_range(0..120) as f64 / 4.0;
                let y0 = rng.gen_range(0..120) as f64 / 4.0;
                let w = rng.gen_range(1..80) as f64 / 4.0;
                let h = rng.gen_range(1..80) as f64 / 4.0;
                bb(x0, y0, x0 + w, y0 + h)
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let got = iou(&a, &b).unwrap();
            let want = raster_iou(&a, &b, 4.0);
            assert!((got - want).abs() < 1e-3, "{a:?} {b:?} {got} {want}");
        }
    }
}
