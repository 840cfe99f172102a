//! RoIAlign: box-conditioned bilinear pooling without coordinate rounding.
//!
//! A box given in input-image pixels is divided by the level stride, split
//! into `S x S` bins, and each bin averages `2 x 2` regularly spaced bilinear
//! samples. Feature cell `i` is centred at continuous coordinate `i + 0.5`, so
//! the interpolation index of a coordinate `u` is `u - 0.5`.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::BoundingBox;
use crate::nn::{FeatureMap, Real};

/// Samples per bin along each axis.
pub const SAMPLING_RATIO: usize = 2;

const TAPS_PER_BIN: usize = SAMPLING_RATIO * SAMPLING_RATIO * 4;

/// Precomputed interpolation taps of one box on one map: for every bin, the
/// plane offsets and weights (already divided by the sample count).
#[derive(Debug, Clone)]
pub struct RoiPlan {
    pub output_size: usize,
    map_hw: (usize, usize),
    taps: Vec<(usize, f64)>,
}

impl RoiPlan {
    pub fn new(map_height: usize, map_width: usize, b: &BoundingBox, output_size: usize, stride: f64) -> Result<Self> {
        if output_size == 0 || map_height == 0 || map_width == 0 {
            return Err(invalid("roi_align needs a non-empty map and output size"));
        }
        if !(stride > 0.0) {
            return Err(invalid("roi_align stride must be positive"));
        }
        let scaled = b.scaled(1.0 / stride);
        scaled
            .validate()
            .map_err(|_| invalid(alloc::format!("box {b:?} has zero area at stride {stride}")))?;
        let start_x = scaled.x0 - 0.5;
        let start_y = scaled.y0 - 0.5;
        let bin_w = scaled.width() / output_size as f64;
        let bin_h = scaled.height() / output_size as f64;
        let inv_count = 1.0 / (SAMPLING_RATIO * SAMPLING_RATIO) as f64;
        let mut taps = Vec::with_capacity(output_size * output_size * TAPS_PER_BIN);
        for py in 0..output_size {
            for px in 0..output_size {
                for iy in 0..SAMPLING_RATIO {
                    let y = start_y + py as f64 * bin_h + (iy as f64 + 0.5) * bin_h / SAMPLING_RATIO as f64;
                    for ix in 0..SAMPLING_RATIO {
                        let x = start_x + px as f64 * bin_w + (ix as f64 + 0.5) * bin_w / SAMPLING_RATIO as f64;
                        push_bilinear(&mut taps, map_height, map_width, y, x, inv_count);
                    }
                }
            }
        }
        Ok(Self { output_size, map_hw: (map_height, map_width), taps })
    }

    pub fn forward<T: Real>(&self, map: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!((map.height, map.width), self.map_hw, "roi plan built for a different map");
        let s2 = self.output_size * self.output_size;
        let plane_len = map.plane();
        let mut out = FeatureMap::zeros(map.channels, self.output_size, self.output_size);
        for c in 0..map.channels {
            let plane = &map.data[c * plane_len..(c + 1) * plane_len];
            let dst = &mut out.data[c * s2..(c + 1) * s2];
            for (bin, taps) in self.taps.chunks_exact(TAPS_PER_BIN).enumerate() {
                let mut acc = T::zero();
                for &(idx, w) in taps {
                    acc += plane[idx] * T::of(w);
                }
                dst[bin] = acc;
            }
        }
        out
    }

    /// Scatters `dout` (`C x S x S`) back onto a map-shaped gradient.
    pub fn backward<T: Real>(&self, dout: &FeatureMap<T>, dmap: &mut FeatureMap<T>) {
        let s2 = self.output_size * self.output_size;
        let plane_len = dmap.plane();
        for c in 0..dout.channels {
            let src = &dout.data[c * s2..(c + 1) * s2];
            let plane = &mut dmap.data[c * plane_len..(c + 1) * plane_len];
            for (bin, taps) in self.taps.chunks_exact(TAPS_PER_BIN).enumerate() {
                let g = src[bin];
                for &(idx, w) in taps {
                    plane[idx] += g * T::of(w);
                }
            }
        }
    }
}

/// Appends the four bilinear taps of sample `(y, x)`; out-of-range samples
/// contribute four zero-weight taps so every bin has the same tap count.
fn push_bilinear(taps: &mut Vec<(usize, f64)>, h: usize, w: usize, y: f64, x: f64, scale: f64) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        taps.extend_from_slice(&[(0, 0.0); 4]);
        return;
    }
    let (y, x) = (y.max(0.0), x.max(0.0));
    let (mut y_lo, mut x_lo) = (y as usize, x as usize);
    let (y_hi, x_hi);
    let (mut yy, mut xx) = (y, x);
    if y_lo >= h - 1 {
        y_lo = h - 1;
        y_hi = h - 1;
        yy = y_lo as f64;
    } else {
        y_hi = y_lo + 1;
    }
    if x_lo >= w - 1 {
        x_lo = w - 1;
        x_hi = w - 1;
        xx = x_lo as f64;
    } else {
        x_hi = x_lo + 1;
    }
    let ly = yy - y_lo as f64;
    let lx = xx - x_lo as f64;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    taps.push((y_lo * w + x_lo, hy * hx * scale));
    taps.push((y_lo * w + x_hi, hy * lx * scale));
    taps.push((y_hi * w + x_lo, ly * hx * scale));
    taps.push((y_hi * w + x_hi, ly * lx * scale));
}

/// One-shot RoIAlign of `b` (input-image pixels) on a map of the given stride.
pub fn roi_align<T: Real>(map: &FeatureMap<T>, b: &BoundingBox, output_size: usize, stride: f64) -> Result<FeatureMap<T>> {
    let plan = RoiPlan::new(map.height, map.width, b, output_size, stride)?;
    Ok(plan.forward(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::standard_normal;
    use crate::rng::seeded;
    use alloc::vec;
    use rand::Rng;

    /// Direct evaluation of the 2x2-point bilinear average per bin, written
    /// against the map accessor with no shared code.
    pub(crate) fn oracle(map: &FeatureMap<f64>, b: &BoundingBox, s: usize, stride: f64) -> Vec<f64> {
        let (h, w) = (map.height as f64, map.width as f64);
        let sample = |c: usize, y: f64, x: f64| -> f64 {
            if y < -1.0 || y > h || x < -1.0 || x > w {
                return 0.0;
            }
            let y = y.max(0.0).min(h - 1.0);
            let x = x.max(0.0).min(w - 1.0);
            let y0 = y.floor();
            let x0 = x.floor();
            let y1 = (y0 + 1.0).min(h - 1.0);
            let x1 = (x0 + 1.0).min(w - 1.0);
            let (dy, dx) = (y - y0, x - x0);
            let v = |yy: f64, xx: f64| map.at(c, yy as usize, xx as usize);
            v(y0, x0) * (1.0 - dy) * (1.0 - dx) + v(y0, x1) * (1.0 - dy) * dx + v(y1, x0) * dy * (1.0 - dx) + v(y1, x1) * dy * dx
        };
        let (x0, y0) = (b.x0 / stride, b.y0 / stride);
        let (bw, bh) = ((b.x1 - b.x0) / stride / s as f64, (b.y1 - b.y0) / stride / s as f64);
        let mut out = vec![0.0; map.channels * s * s];
        for c in 0..map.channels {
            for py in 0..s {
                for px in 0..s {
                    let mut acc = 0.0;
                    for (fy, fx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                        let y = y0 + (py as f64 + fy) * bh - 0.5;
                        let x = x0 + (px as f64 + fx) * bw - 0.5;
                        acc += sample(c, y, x);
                    }
                    out[(c * s + py) * s + px] = acc / 4.0;
                }
            }
        }
        out
    }

    fn random_map(c: usize, h: usize, w: usize, rng: &mut crate::rng::CodoRng) -> FeatureMap<f64> {
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| standard_normal(rng)).collect())
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let map = FeatureMap::from_vec(2, 6, 5, vec![1.75f64; 60]);
        let b = BoundingBox::new(3.0, 2.0, 17.0, 21.0).unwrap();
        let out = roi_align(&map, &b, 7, 4.0).unwrap();
        assert!(out.data.iter().all(|&v| (v - 1.75).abs() < 1e-12));
    }

    #[test]
    fn full_box_reproduces_affine_map_in_the_interior() {
        let (h, w) = (6, 6);
        let data: Vec<f64> = (0..h * w).map(|i| 0.5 * (i / w) as f64 - 0.25 * (i % w) as f64 + 1.0).collect();
        let map = FeatureMap::from_vec(1, h, w, data);
        let b = BoundingBox::new(0.0, 0.0, w as f64, h as f64).unwrap();
        let out = roi_align(&map, &b, w, 1.0).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!((out.at(0, y, x) - map.at(0, y, x)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn five_by_five_example_matches_oracle() {
        let mut rng = seeded(55);
        let map = random_map(1, 5, 5, &mut rng);
        let b = BoundingBox::new(0.5, 0.5, 3.5, 3.5).unwrap();
        let got = roi_align(&map, &b, 2, 1.0).unwrap();
        let want = oracle(&map, &b, 2, 1.0);
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn random_cases_match_oracle() {
        let mut rng = seeded(77);
        for _ in 0..100 {
            let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let c = rng.gen_range(1..4);
            let map = random_map(c, h, w, &mut rng);
            let stride = [1.0, 2.0, 4.0][rng.gen_range(0..3)];
            let x0 = rng.gen_range(-2.0..w as f64 * stride);
            let y0 = rng.gen_range(-2.0..h as f64 * stride);
            let b = BoundingBox::new(x0, y0, x0 + rng.gen_range(0.3..20.0), y0 + rng.gen_range(0.3..20.0)).unwrap();
            let s = rng.gen_range(1..8);
            let got = roi_align(&map, &b, s, stride).unwrap();
            let want = oracle(&map, &b, s, stride);
            for (a, b) in got.data.iter().zip(&want) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        let mut rng = seeded(3);
        let map = random_map(2, 7, 6, &mut rng);
        let b = BoundingBox::new(1.3, 0.2, 5.9, 6.6).unwrap();
        let plan = RoiPlan::new(7, 6, &b, 3, 1.0).unwrap();
        let out = plan.forward(&map);
        let probe = random_map(2, 3, 3, &mut rng);
        let mut dmap = FeatureMap::zeros(2, 7, 6);
        plan.backward(&probe, &mut dmap);
        let lhs: f64 = out.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = map.data.iter().zip(&dmap.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_area_after_scaling_is_rejected() {
        let map = FeatureMap::<f64>::zeros(1, 4, 4);
        let tiny = BoundingBox::new(0.0, 0.0, 1e-300, 1e-300).unwrap();
        assert!(roi_align(&map, &tiny, 7, 1e300).is_err());
    }
}
