//! 8-bit grayscale export of magnitude images, min-max windowed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numcore::RealImage;

/// Map `[min, max]` linearly onto `0..=255`. A constant image maps to 0.
pub fn to_gray8(img: &RealImage) -> Vec<u8> {
    let (lo, hi) = (img.min(), img.max());
    let range = hi - lo;
    img.data()
        .iter()
        .map(|v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn encode_png(img: &RealImage) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encoding: {e}")))?;
        writer
            .write_image_data(&to_gray8(img))
            .map_err(|e| Error::InvalidArgument(format!("png encoding: {e}")))?;
    }
    Ok(out)
}

pub fn encode_pgm(img: &RealImage) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(to_gray8(img));
    out
}

pub fn export_png(img: &RealImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn export_pgm(img: &RealImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}
