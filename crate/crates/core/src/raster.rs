//! Multiband TIFF reading and writing.
//!
//! Bands may be stored either as one page per band (what this crate writes)
//! or as a single pixel-interleaved page with `SamplesPerPixel = C`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::NaiveDate;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};

use crate::cube::Cube;
use crate::error::{Error, Result};

pub const RASTER_EXTENSIONS: &[&str] = &["tif", "tiff"];

pub fn is_raster_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| RASTER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Finds the first `YYYY-MM-DD` token in the file stem.
pub fn date_from_filename(path: &Path) -> Result<NaiveDate> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::MissingDate {
            path: path.to_path_buf(),
        })?;
    let bytes = stem.as_bytes();
    if bytes.len() >= 10 {
        for start in 0..=bytes.len() - 10 {
            let w = &bytes[start..start + 10];
            let shaped = w.iter().enumerate().all(|(i, b)| match i {
                4 | 7 => *b == b'-',
                _ => b.is_ascii_digit(),
            });
            if !shaped {
                continue;
            }
            // Bytes are ASCII here, so the slice is valid UTF-8.
            if let Ok(d) = NaiveDate::parse_from_str(&stem[start..start + 10], "%Y-%m-%d") {
                return Ok(d);
            }
        }
    }
    Err(Error::MissingDate {
        path: path.to_path_buf(),
    })
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Raster {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn to_f32(result: DecodingResult) -> Vec<f32> {
    match result {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
    }
}

/// Reads a multiband raster into a `C × H × W` cube.
pub fn read_raster(path: &Path) -> Result<Cube> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| decode_err(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = dec.dimensions().map_err(|e| decode_err(path, e))?;
    let (w, h) = (w as usize, h as usize);
    let samples = dec
        .colortype()
        .map_err(|e| decode_err(path, e))?
        .num_samples() as usize;

    if samples > 1 {
        let interleaved = to_f32(dec.read_image().map_err(|e| decode_err(path, e))?);
        if interleaved.len() != w * h * samples {
            return Err(decode_err(path, "sample count does not match dimensions"));
        }
        let mut cube = Cube::zeros(samples, h, w);
        for (i, px) in interleaved.chunks_exact(samples).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                cube.plane_mut(c)[i] = v;
            }
        }
        return Ok(cube);
    }

    let mut data = Vec::new();
    let mut bands = 0;
    loop {
        let (pw, ph) = dec.dimensions().map_err(|e| decode_err(path, e))?;
        if (pw as usize, ph as usize) != (w, h) {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                expected: format!("band of {h}x{w}"),
                found: format!("band {bands} of {ph}x{pw}"),
            });
        }
        let band = to_f32(dec.read_image().map_err(|e| decode_err(path, e))?);
        if band.len() != w * h {
            return Err(decode_err(path, "band length does not match dimensions"));
        }
        data.extend_from_slice(&band);
        bands += 1;
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| decode_err(path, e))?;
    }
    Cube::from_vec(bands, h, w, data)
}

/// Writes one 32-bit float page per band.
pub fn write_raster(path: &Path, cube: &Cube) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| decode_err(path, e))?;
    for c in 0..cube.channels() {
        enc.write_image::<colortype::Gray32Float>(
            cube.width() as u32,
            cube.height() as u32,
            cube.plane(c),
        )
        .map_err(|e| decode_err(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_iso_date_anywhere_in_stem() {
        let d = date_from_filename(Path::new("/x/roi_2017-01-13.tif")).unwrap();
        assert_eq!(d, NaiveDate::from_ymd_opt(2017, 1, 13).unwrap());
        let d = date_from_filename(Path::new("S2_2020-02-29_L2A.tiff")).unwrap();
        assert_eq!(d, NaiveDate::from_ymd_opt(2020, 2, 29).unwrap());
    }

    #[test]
    fn rejects_missing_or_invalid_date() {
        assert!(matches!(
            date_from_filename(Path::new("roi_nodate.tif")),
            Err(Error::MissingDate { .. })
        ));
        assert!(date_from_filename(Path::new("roi_2019-02-30.tif")).is_err());
    }

    #[test]
    fn raster_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a_2020-01-01.tif");
        let data: Vec<f32> = (0..3 * 5 * 7).map(|i| i as f32 * 0.013 - 0.2).collect();
        let cube = Cube::from_vec(3, 5, 7, data).unwrap();
        write_raster(&path, &cube).unwrap();
        assert_eq!(read_raster(&path).unwrap(), cube);
    }

    #[test]
    fn reads_pixel_interleaved_multiband() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.tif");
        let (w, h) = (4u32, 3u32);
        let interleaved: Vec<f32> = (0..w * h * 3).map(|i| i as f32).collect();
        {
            let f = File::create(&path).unwrap();
            let mut enc = TiffEncoder::new(BufWriter::new(f)).unwrap();
            enc.write_image::<colortype::RGB32Float>(w, h, &interleaved)
                .unwrap();
        }
        let cube = read_raster(&path).unwrap();
        assert_eq!(cube.shape(), (3, 3, 4));
        assert_eq!(cube.get(1, 0, 0), 1.0);
        assert_eq!(cube.get(2, 2, 3), interleaved[(2 * 4 + 3) * 3 + 2]);
    }
}
