//! Heatmap export: 8-bit PNG with a fixed "hot" ramp, and single-band raster.

use std::io::BufWriter;
use std::path::Path;

use crate::cube::{Cube, Heatmap};
use crate::error::{Error, Result};
use crate::fsutil::atomic_with;
use crate::raster::write_raster;

const RED_END: f64 = 0.365_079;
const GREEN_END: f64 = 0.746_032;

/// Black → red → yellow → white. Inputs are clamped to `[0, 1]`, never autoscaled.
pub fn hot(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { (v as f64).clamp(0.0, 1.0) };
    let ramp = |lo: f64, hi: f64| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    let to_u8 = |x: f64| (x * 255.0).round() as u8;
    [
        to_u8(ramp(0.0, RED_END)),
        to_u8(ramp(RED_END, GREEN_END)),
        to_u8(ramp(GREEN_END, 1.0)),
    ]
}

pub fn heatmap_rgb(map: &Heatmap) -> Vec<u8> {
    map.data.iter().flat_map(|&v| hot(v)).collect()
}

pub fn write_heatmap_png(path: &Path, map: &Heatmap) -> Result<()> {
    atomic_with(path, |tmp| {
        let file = std::fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let png_err = |e: png::EncodingError| Error::Raster {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut enc = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&heatmap_rgb(map)).map_err(png_err)?;
        w.finish().map_err(png_err)
    })
}

pub fn write_heatmap_raster(path: &Path, map: &Heatmap) -> Result<()> {
    let cube = Cube::from_vec(1, map.height, map.width, map.data.clone())?;
    atomic_with(path, |tmp| write_raster(tmp, &cube))
}
