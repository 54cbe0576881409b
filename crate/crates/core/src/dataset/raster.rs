// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};

pub fn load_raster(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Domain(format!("decode {}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Channel-major tensor in `[-1, 1]`, resized to `input_size` when needed.
pub fn raster_to_tensor(img: &RgbImage, input_size: u32) -> Vec<f64> {
    let resized;
    let img = if img.dimensions() != (input_size, input_size) {
        resized = image::imageops::resize(img, input_size, input_size, FilterType::Triangle);
        &resized
    } else {
        img
    };
    let n = (input_size * input_size) as usize;
    let mut out = vec![0.0; 3 * n];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = p[c] as f64 / 127.5 - 1.0;
        }
    }
    out
}

pub fn load_tensor(path: &Path, input_size: u32) -> Result<Vec<f64>> {
    Ok(raster_to_tensor(&load_raster(path)?, input_size))
}
