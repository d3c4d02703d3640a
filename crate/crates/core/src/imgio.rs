//! PNG boundary: 8-bit sRGB files <-> linear-light float tensors.

use std::path::Path;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Load a PNG as a flat [3, res, res] linear buffer, resizing if needed.
pub fn load_png_linear(path: &Path, resolution: usize) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?
        .into_rgb8();
    let img = if img.width() as usize != resolution || img.height() as usize != resolution {
        image::imageops::resize(
            &img,
            resolution as u32,
            resolution as u32,
            image::imageops::FilterType::Triangle,
        )
    } else {
        img
    };
    let mut out = vec![0.0f32; 3 * resolution * resolution];
    for (px, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * resolution * resolution + px] = srgb_to_linear(p.0[c] as f64 / 255.0) as f32;
        }
    }
    Ok(out)
}

/// Write a [3,H,W] linear tensor (values clamped to [0,1]) as an sRGB PNG.
pub fn save_png_linear<E: Elem>(path: &Path, img: &Tensor<E>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidArgument(format!(
            "save_png_linear expects [3,H,W], got {:?}",
            s
        )));
    }
    let (h, w) = (s[1], s[2]);
    let data = img.data();
    let mut buf = vec![0u8; 3 * h * w];
    for px in 0..h * w {
        for c in 0..3 {
            let lin = data[c * h * w + px].to_f64().clamp(0.0, 1.0);
            buf[px * 3 + c] = (linear_to_srgb(lin) * 255.0).round() as u8;
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    image::save_buffer(
        path,
        &buf,
        w as u32,
        h as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))
}
