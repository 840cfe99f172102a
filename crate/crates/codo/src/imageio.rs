//! PNG encoding of [`Image`]s.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use codo_core::Image;

use crate::error::{CliError, IoContext, Result};

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(img.data()).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Reads 8-bit RGB, RGBA, gray or palette PNGs into RGB.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).at(path)?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| CliError::format(path, e.to_string());
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| CliError::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(CliError::format(path, "palette was not expanded")),
    };
    Image::from_raw(w, h, rgb).map_err(|e| CliError::format(path, e.to_string()))
}
