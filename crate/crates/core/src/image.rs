//! Interleaved 8-bit RGB raster.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::BoundingBox;
use crate::rng::fnv1a;

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl core::fmt::Debug for Image {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("checksum", &self.checksum())
            .finish()
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = vec![0u8; width * height * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(invalid(alloc::format!(
                "raw buffer of {} bytes does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + self.data.len());
        bytes.extend_from_slice(&(self.width as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u64).to_le_bytes());
        bytes.extend_from_slice(&self.data);
        fnv1a(&bytes)
    }

    /// Pixel rectangle `[x, x + w) x [y, y + h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(invalid("crop rectangle outside image"));
        }
        let mut out = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            out.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Image { width: w, height: h, data: out })
    }

    /// Crops the pixels covered by a continuous box (outward rounding, clipped).
    pub fn crop_box(&self, b: &BoundingBox) -> Result<Image> {
        b.validate()?;
        let x0 = (libm::floor(b.x0).max(0.0) as usize).min(self.width);
        let y0 = (libm::floor(b.y0).max(0.0) as usize).min(self.height);
        let x1 = (libm::ceil(b.x1).max(0.0) as usize).min(self.width);
        let y1 = (libm::ceil(b.y1).max(0.0) as usize).min(self.height);
        if x1 <= x0 || y1 <= y0 {
            return Err(invalid("box does not cover any pixel"));
        }
        self.crop(x0, y0, x1 - x0, y1 - y0)
    }

    /// Bilinear resample with pixel-center alignment.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Image> {
        if self.is_empty() || new_w == 0 || new_h == 0 {
            return Err(invalid("resize of or to an empty image"));
        }
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f32 / new_w as f32;
        let sy = self.height as f32 / new_h as f32;
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let mut out = vec![0u8; new_w * new_h * 3];
        for oy in 0..new_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for ox in 0..new_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                let (p00, p01) = (self.pixel(x0, y0), self.pixel(x1, y0));
                let (p10, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
                let o = (oy * new_w + ox) * 3;
                for c in 0..3 {
                    let top = p00[c] as f32 * (1.0 - wx) + p01[c] as f32 * wx;
                    let bot = p10[c] as f32 * (1.0 - wx) + p11[c] as f32 * wx;
                    out[o + c] = (top * (1.0 - wy) + bot * wy + 0.5).clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(Image { width: new_w, height: new_h, data: out })
    }

    /// Hard paste of `src` with its top-left corner at `(x, y)`; must fit.
    pub fn paste(&mut self, src: &Image, x: usize, y: usize) -> Result<()> {
        if x + src.width > self.width || y + src.height > self.height {
            return Err(invalid("pasted image does not fit"));
        }
        for row in 0..src.height {
            let d = ((y + row) * self.width + x) * 3;
            let s = row * src.width * 3;
            self.data[d..d + src.width * 3].copy_from_slice(&src.data[s..s + src.width * 3]);
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_paste_round_trip() {
        let mut img = Image::new(8, 6);
        img.set_pixel(3, 2, [10, 20, 30]);
        let c = img.crop(2, 1, 3, 3).unwrap();
        assert_eq!(c.pixel(1, 1), [10, 20, 30]);
        let mut canvas = Image::filled(10, 10, [1, 1, 1]);
        canvas.paste(&c, 5, 5).unwrap();
        assert_eq!(canvas.pixel(6, 6), [10, 20, 30]);
        assert!(canvas.paste(&c, 8, 8).is_err());
    }

    #[test]
    fn crop_box_rounds_outward() {
        let img = Image::new(10, 10);
        let c = img.crop_box(&BoundingBox::new(1.5, 2.2, 4.1, 5.0).unwrap()).unwrap();
        assert_eq!((c.width(), c.height()), (4, 3));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(5, 7, [9, 99, 199]);
        let r = img.resize_bilinear(13, 4).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [9, 99, 199]));
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut img = Image::new(5, 2);
        img.set_pixel(0, 1, [1, 2, 3]);
        assert_eq!(img.flip_horizontal().pixel(4, 1), [1, 2, 3]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }
}
