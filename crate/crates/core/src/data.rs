//! Loading, validation, normalization and patch slicing of an image series.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::Cube;
use crate::error::{Error, Result};
use crate::raster;

pub const DEFAULT_CHANNELS: usize = 10;
pub const DEFAULT_PATCH: usize = 32;

/// One dated observation of the region.
#[derive(Debug, Clone, PartialEq)]
pub struct SitsImage {
    pub bands: Cube,
    pub date: NaiveDate,
    pub day_of_year: u16,
}

impl SitsImage {
    pub fn new(bands: Cube, date: NaiveDate) -> Self {
        SitsImage {
            bands,
            date,
            day_of_year: date.ordinal() as u16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct SitsDataset {
    pub images: Vec<SitsImage>,
    pub role: Role,
}

impl SitsDataset {
    /// Builds a dataset, sorting by date and checking the series invariants.
    pub fn new(mut images: Vec<SitsImage>, role: Role) -> Result<Self> {
        images.sort_by_key(|im| im.date);
        if let Some(pair) = images.windows(2).find(|p| p[0].date == p[1].date) {
            return Err(Error::InvalidArgument(format!(
                "duplicate acquisition date {}",
                pair[0].date
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.bands.shape();
            if let Some(bad) = images.iter().find(|im| im.bands.shape() != shape) {
                return Err(Error::Shape(format!(
                    "image {} is {:?}, series is {:?}",
                    bad.date,
                    bad.bands.shape(),
                    shape
                )));
            }
        }
        Ok(SitsDataset { images, role })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| im.bands.shape())
    }
}

/// How bands are selected from raster files and what shape they must have.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub channels: usize,
    /// Zero-based file band indices to keep, in order. `None` keeps all bands.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
    pub patch: usize,
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec {
            channels: DEFAULT_CHANNELS,
            order: None,
            patch: DEFAULT_PATCH,
        }
    }
}

impl BandSpec {
    fn apply(&self, path: &Path, cube: Cube) -> Result<Cube> {
        let cube = match &self.order {
            None => cube,
            Some(order) => {
                if let Some(&bad) = order.iter().find(|&&b| b >= cube.channels()) {
                    return Err(Error::ShapeMismatch {
                        path: path.to_path_buf(),
                        expected: format!("band index {bad} to exist"),
                        found: format!("{} bands", cube.channels()),
                    });
                }
                let mut data = Vec::with_capacity(order.len() * cube.plane_len());
                for &b in order {
                    data.extend_from_slice(cube.plane(b));
                }
                Cube::from_vec(order.len(), cube.height(), cube.width(), data)?
            }
        };
        if cube.channels() != self.channels {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                expected: format!("{} channels", self.channels),
                found: format!("{} channels", cube.channels()),
            });
        }
        if cube.height() % self.patch != 0 || cube.width() % self.patch != 0 {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                expected: format!("dimensions divisible by {}", self.patch),
                found: format!("{}x{}", cube.height(), cube.width()),
            });
        }
        if let Some((band, row, col)) = cube.find_non_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                band,
                row,
                col,
            });
        }
        Ok(cube)
    }
}

/// Loads every raster in `dir` whose name embeds an ISO date.
pub fn load_sits_directory(dir: &Path, spec: &BandSpec, role: Role) -> Result<SitsDataset> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && raster::is_raster_path(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("no raster files in directory"));
    }

    let loaded: Vec<(PathBuf, SitsImage)> = paths
        .par_iter()
        .map(|path| {
            let date = raster::date_from_filename(path)?;
            let cube = spec.apply(path, raster::read_raster(path)?)?;
            Ok((path.clone(), SitsImage::new(cube, date)))
        })
        .collect::<Result<_>>()?;

    let (first_path, first) = &loaded[0];
    for (path, im) in &loaded[1..] {
        if im.bands.shape() != first.bands.shape() {
            return Err(Error::ShapeMismatch {
                path: path.clone(),
                expected: format!("{:?} like {}", first.bands.shape(), first_path.display()),
                found: format!("{:?}", im.bands.shape()),
            });
        }
    }
    SitsDataset::new(loaded.into_iter().map(|(_, im)| im).collect(), role)
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Same convention as [`percentile_sorted`] via selection on an unsorted buffer.
pub fn percentile_select(values: &mut [f32], q: f64) -> f64 {
    let n = values.len();
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_v, upper) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_v = *lo_v as f64;
    if frac == 0.0 || upper.is_empty() {
        return lo_v;
    }
    let hi_v = upper.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    lo_v + frac * (hi_v - lo_v)
}

/// Percentile scalars driving min-max normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub p1: f64,
    pub p99: f64,
    pub channels: usize,
    /// Per-channel `(p1, p99)`; only set in per-channel mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_channel: Option<Vec<(f64, f64)>>,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.p99 > self.p1) {
            return Err(Error::DegenerateStats(self.p1));
        }
        if let Some(pc) = &self.per_channel {
            if pc.len() != self.channels {
                return Err(Error::InvalidArgument(
                    "per-channel stats length differs from channel count".into(),
                ));
            }
            if let Some(&(lo, _)) = pc.iter().find(|(lo, hi)| !(hi > lo)) {
                return Err(Error::DegenerateStats(lo));
            }
        }
        Ok(())
    }

    fn bounds(&self, c: usize) -> (f64, f64) {
        match &self.per_channel {
            Some(pc) => pc[c],
            None => (self.p1, self.p99),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: NormStats = serde_json::from_str(s)?;
        stats.validate()?;
        Ok(stats)
    }
}

/// Pooled 1st/99th percentiles over every sample of the training images.
pub fn compute_norm_stats(train: &SitsDataset, per_channel: bool) -> Result<NormStats> {
    let (channels, _, _) = train.shape().ok_or(Error::Empty("training dataset"))?;
    let per_channel = if per_channel {
        let mut pc = Vec::with_capacity(channels);
        for c in 0..channels {
            let mut pool: Vec<f32> = train
                .images
                .iter()
                .flat_map(|im| im.bands.plane(c).iter().copied())
                .collect();
            let p1 = percentile_select(&mut pool, 1.0);
            let p99 = percentile_select(&mut pool, 99.0);
            if !(p99 > p1) {
                return Err(Error::DegenerateStats(p1));
            }
            pc.push((p1, p99));
        }
        Some(pc)
    } else {
        None
    };
    let mut pool: Vec<f32> = train
        .images
        .iter()
        .flat_map(|im| im.bands.as_slice().iter().copied())
        .collect();
    let p1 = percentile_select(&mut pool, 1.0);
    let p99 = percentile_select(&mut pool, 99.0);
    if !(p99 > p1) {
        return Err(Error::DegenerateStats(p1));
    }
    Ok(NormStats {
        p1,
        p99,
        channels,
        per_channel,
    })
}

/// `clamp((x - p1) / (p99 - p1), 0, 1)` elementwise.
pub fn normalize(image: &SitsImage, stats: &NormStats) -> Result<SitsImage> {
    stats.validate()?;
    if image.bands.channels() != stats.channels {
        return Err(Error::Shape(format!(
            "image has {} channels, stats describe {}",
            image.bands.channels(),
            stats.channels
        )));
    }
    let mut bands = image.bands.clone();
    for c in 0..bands.channels() {
        let (lo, hi) = stats.bounds(c);
        let span = hi - lo;
        for v in bands.plane_mut(c) {
            let x = (*v as f64 - lo) / span;
            *v = x.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(SitsImage {
        bands,
        date: image.date,
        day_of_year: image.day_of_year,
    })
}

pub fn normalize_dataset(ds: &SitsDataset, stats: &NormStats) -> Result<SitsDataset> {
    let images = ds
        .images
        .iter()
        .map(|im| normalize(im, stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(SitsDataset {
        images,
        role: ds.role,
    })
}

/// Per-pixel, per-channel median of the normalized training images.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineImage {
    pub bands: Cube,
}

/// Median of an unsorted buffer; even counts average the two central values.
pub fn median(values: &mut [f32]) -> f32 {
    let n = values.len();
    values.sort_unstable_by(f32::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        ((values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0) as f32
    }
}

pub fn compute_baseline(train_normalized: &SitsDataset) -> Result<BaselineImage> {
    let (c, h, w) = train_normalized
        .shape()
        .ok_or(Error::Empty("training dataset"))?;
    let n = c * h * w;
    let data: Vec<f32> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            buf.clear();
            buf.extend(train_normalized.images.iter().map(|im| im.bands.as_slice()[i]));
            median(buf)
        })
        .collect();
    Ok(BaselineImage {
        bands: Cube::from_vec(c, h, w, data)?,
    })
}

/// One training unit: baseline and observed patch at a grid cell and date.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub baseline_patch: Arc<Cube>,
    pub target_patch: Cube,
    pub day_of_year: u16,
    pub row: usize,
    pub col: usize,
}

/// Number of patch rows and columns of an image.
pub fn patch_grid_dims(height: usize, width: usize, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Shape(format!(
            "{height}x{width} is not divisible into {patch}x{patch} patches"
        )));
    }
    Ok((height / patch, width / patch))
}

/// Non-overlapping patches of the baseline, in row-major grid order.
pub fn baseline_patches(baseline: &BaselineImage, patch: usize) -> Result<Vec<Arc<Cube>>> {
    let b = &baseline.bands;
    let (rows, cols) = patch_grid_dims(b.height(), b.width(), patch)?;
    Ok((0..rows * cols)
        .map(|i| Arc::new(b.crop((i / cols) * patch, (i % cols) * patch, patch)))
        .collect())
}

pub fn extract_patch_grid(
    image: &SitsImage,
    baseline: &BaselineImage,
    patch: usize,
) -> Result<Vec<PatchSample>> {
    let base = baseline_patches(baseline, patch)?;
    extract_with_baseline_patches(image, &base, patch)
}

/// Like [`extract_patch_grid`] but reuses already-cut baseline patches.
pub fn extract_with_baseline_patches(
    image: &SitsImage,
    base: &[Arc<Cube>],
    patch: usize,
) -> Result<Vec<PatchSample>> {
    let b = &image.bands;
    let (rows, cols) = patch_grid_dims(b.height(), b.width(), patch)?;
    if base.len() != rows * cols || base[0].channels() != b.channels() {
        return Err(Error::Shape(format!(
            "baseline grid of {} patches does not match image {:?}",
            base.len(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            out.push(PatchSample {
                baseline_patch: Arc::clone(&base[row * cols + col]),
                target_patch: b.crop(row * patch, col * patch, patch),
                day_of_year: image.day_of_year,
                row,
                col,
            });
        }
    }
    Ok(out)
}

/// Reassembles row-major patches into a full image.
pub fn stitch_patches(patches: &[Cube], rows: usize, cols: usize) -> Result<Cube> {
    if patches.len() != rows * cols || patches.is_empty() {
        return Err(Error::Shape(format!(
            "{} patches for a {rows}x{cols} grid",
            patches.len()
        )));
    }
    let (c, p, _) = patches[0].shape();
    let mut out = Cube::zeros(c, rows * p, cols * p);
    for (i, patch) in patches.iter().enumerate() {
        if patch.shape() != (c, p, p) {
            return Err(Error::Shape(format!("patch {i} is {:?}", patch.shape())));
        }
        out.paste(patch, (i / cols) * p, (i % cols) * p);
    }
    Ok(out)
}

/// Seeded random partition into `(train, val)`, each keeping input order.
pub fn split_train_val<T>(samples: Vec<T>, val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::Empty("sample list"));
    }
    if n == 1 {
        return Err(Error::InvalidArgument(
            "cannot split a single sample into train and validation".into(),
        ));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (s, v) in samples.into_iter().zip(is_val) {
        if v {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn image_filled(c: usize, h: usize, w: usize, v: f32, d: NaiveDate) -> SitsImage {
        SitsImage::new(Cube::filled(c, h, w, v), d)
    }

    fn write(dir: &Path, name: &str, cube: &Cube) {
        raster::write_raster(&dir.join(name), cube).unwrap();
    }

    #[test]
    fn loads_directory_sorted_by_date() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BandSpec {
            channels: 2,
            order: None,
            patch: 4,
        };
        write(dir.path(), "roi_2017-01-13.tif", &Cube::filled(2, 8, 8, 0.2));
        write(dir.path(), "roi_2017-01-03.tif", &Cube::filled(2, 8, 8, 0.1));
        std::fs::write(dir.path().join("labels.csv"), "ignored").unwrap();
        let ds = load_sits_directory(dir.path(), &spec, Role::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[0].date, date(2017, 1, 3));
        assert_eq!(ds.images[1].date, date(2017, 1, 13));
        assert_eq!(ds.images[1].day_of_year, 13);
    }

    #[test]
    fn missing_date_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BandSpec {
            channels: 1,
            order: None,
            patch: 4,
        };
        write(dir.path(), "roi_nodate.tif", &Cube::zeros(1, 4, 4));
        let err = load_sits_directory(dir.path(), &spec, Role::Train).unwrap_err();
        assert!(err.to_string().contains("roi_nodate.tif"), "{err}");
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BandSpec {
            channels: 1,
            order: None,
            patch: 32,
        };
        write(dir.path(), "roi_2017-01-03.tif", &Cube::zeros(1, 512, 512));
        write(dir.path(), "roi_2017-01-13.tif", &Cube::zeros(1, 1024, 1024));
        let err = load_sits_directory(dir.path(), &spec, Role::Train).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn non_finite_pixel_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BandSpec {
            channels: 2,
            order: None,
            patch: 4,
        };
        let mut cube = Cube::zeros(2, 4, 4);
        cube.set(1, 2, 3, f32::INFINITY);
        write(dir.path(), "roi_2017-01-03.tif", &cube);
        let err = load_sits_directory(dir.path(), &spec, Role::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("roi_2017-01-03.tif") && msg.contains("band 1"), "{msg}");
    }

    #[test]
    fn band_order_selects_and_reorders() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3).flat_map(|b| vec![b as f32; 16]).collect();
        write(dir.path(), "x_2018-05-01.tif", &Cube::from_vec(3, 4, 4, data).unwrap());
        let spec = BandSpec {
            channels: 2,
            order: Some(vec![2, 0]),
            patch: 4,
        };
        let ds = load_sits_directory(dir.path(), &spec, Role::Test).unwrap();
        assert_eq!(ds.images[0].bands.get(0, 0, 0), 2.0);
        assert_eq!(ds.images[0].bands.get(1, 0, 0), 0.0);
    }

    #[test]
    fn percentiles_match_sorting_oracle() {
        // Oracle: full sort then numpy-style linear interpolation.
        let values: Vec<f32> = (1..=10_000).map(|v| v as f32).collect();
        let oracle = |q: f64| {
            let mut s = values.clone();
            s.sort_by(f32::total_cmp);
            let pos = q / 100.0 * (s.len() - 1) as f64;
            let (lo, f) = (pos.floor() as usize, pos.fract());
            s[lo] as f64 * (1.0 - f) + s[lo + 1] as f64 * f
        };
        assert!((oracle(1.0) - 100.99).abs() < 1e-9);
        assert!((oracle(99.0) - 9900.01).abs() < 1e-9);

        let mut shuffled = values.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        let p1 = percentile_select(&mut shuffled.clone(), 1.0);
        let p99 = percentile_select(&mut shuffled, 99.0);
        assert!((p1 - oracle(1.0)).abs() < 1e-9);
        assert!((p99 - oracle(99.0)).abs() < 1e-9);

        let ds = SitsDataset::new(
            vec![SitsImage::new(
                Cube::from_vec(1, 100, 100, values).unwrap(),
                date(2017, 1, 1),
            )],
            Role::Train,
        )
        .unwrap();
        let stats = compute_norm_stats(&ds, false).unwrap();
        assert!((stats.p1 - 100.99).abs() < 1e-6 && (stats.p99 - 9900.01).abs() < 1e-6);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let ds = SitsDataset::new(
            vec![image_filled(3, 4, 4, 0.5, date(2017, 1, 1))],
            Role::Train,
        )
        .unwrap();
        assert!(matches!(
            compute_norm_stats(&ds, false),
            Err(Error::DegenerateStats(_))
        ));
    }

    #[test]
    fn per_channel_stats_are_independent() {
        let mut cube = Cube::zeros(2, 10, 10);
        for (i, v) in cube.plane_mut(0).iter_mut().enumerate() {
            *v = i as f32;
        }
        for (i, v) in cube.plane_mut(1).iter_mut().enumerate() {
            *v = 1000.0 + 2.0 * i as f32;
        }
        let ds = SitsDataset::new(vec![SitsImage::new(cube, date(2017, 1, 1))], Role::Train)
            .unwrap();
        let stats = compute_norm_stats(&ds, true).unwrap();
        let pc = stats.per_channel.clone().unwrap();
        assert!((pc[0].0 - 0.99).abs() < 1e-9);
        assert!((pc[1].1 - (1000.0 + 2.0 * 98.01)).abs() < 1e-6);
        let norm = normalize(&ds.images[0], &stats).unwrap();
        assert_eq!(norm.bands.get(1, 9, 9), 1.0);
        assert_eq!(norm.bands.get(0, 0, 0), 0.0);
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let stats = NormStats {
            p1: 100.0,
            p99: 300.0,
            channels: 1,
            per_channel: None,
        };
        let cube = Cube::from_vec(1, 1, 4, vec![100.0, 300.0, 95.0, 200.0]).unwrap();
        let out = normalize(&SitsImage::new(cube, date(2020, 3, 1)), &stats).unwrap();
        assert_eq!(out.bands.as_slice(), &[0.0, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn stats_json_sidecar_shape() {
        let stats = NormStats {
            p1: 0.1,
            p99: 0.9,
            channels: 10,
            per_channel: None,
        };
        let v: serde_json::Value = serde_json::from_str(&stats.to_json().unwrap()).unwrap();
        assert_eq!(v["p1"], 0.1);
        assert_eq!(v["p99"], 0.9);
        assert_eq!(v["channels"], 10);
        assert!(v.get("per_channel").is_none());
        assert_eq!(NormStats::from_json(&stats.to_json().unwrap()).unwrap(), stats);
    }

    #[test]
    fn baseline_median_conventions() {
        let mk = |vals: &[f32]| {
            let images = vals
                .iter()
                .enumerate()
                .map(|(i, &v)| image_filled(1, 2, 2, v, date(2017, 1, 1 + i as u32)))
                .collect();
            compute_baseline(&SitsDataset::new(images, Role::Train).unwrap()).unwrap()
        };
        assert_eq!(mk(&[0.9, 0.2, 0.5]).bands.get(0, 0, 0), 0.5);
        // Sorted {0.1, 0.2, 0.8, 0.9}: central pair (0.2, 0.8) averages to 0.5.
        assert!((mk(&[0.8, 0.1, 0.9, 0.2]).bands.get(0, 1, 1) - 0.5).abs() < 1e-7);
        let same = mk(&[0.3, 0.3]);
        assert!(same.bands.as_slice().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn empty_baseline_is_error() {
        let ds = SitsDataset::new(vec![], Role::Train).unwrap();
        assert!(compute_baseline(&ds).is_err());
    }

    #[test]
    fn patch_grid_counts_and_order() {
        let im = image_filled(2, 64, 64, 0.1, date(2017, 2, 1));
        let base = BaselineImage {
            bands: Cube::filled(2, 64, 64, 0.2),
        };
        let patches = extract_patch_grid(&im, &base, 32).unwrap();
        let cells: Vec<_> = patches.iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(patches.iter().all(|p| p.day_of_year == 32));

        let big = image_filled(1, 1024, 1024, 0.0, date(2017, 2, 1));
        let bbase = BaselineImage {
            bands: Cube::zeros(1, 1024, 1024),
        };
        assert_eq!(extract_patch_grid(&big, &bbase, 32).unwrap().len(), 1024);

        let odd = image_filled(1, 100, 100, 0.0, date(2017, 2, 1));
        let obase = BaselineImage {
            bands: Cube::zeros(1, 100, 100),
        };
        assert!(extract_patch_grid(&odd, &obase, 32).is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let (tr, va) = split_train_val((0..1000).collect::<Vec<_>>(), 0.10, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (900, 100));
        let (tr2, va2) = split_train_val((0..1000).collect::<Vec<_>>(), 0.10, 7).unwrap();
        assert_eq!((tr, va), (tr2, va2));
        assert!(split_train_val(vec![1, 2, 3], 0.0, 1).is_err());
        assert!(split_train_val(Vec::<u8>::new(), 0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn stitching_inverts_extraction(
            c in 1usize..3, rows in 1usize..4, cols in 1usize..4, seed in any::<u64>()
        ) {
            use rand::Rng;
            let p = 8;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..c * rows * p * cols * p).map(|_| rng.random()).collect();
            let im = SitsImage::new(Cube::from_vec(c, rows * p, cols * p, data).unwrap(), date(2019, 6, 1));
            let base = BaselineImage { bands: Cube::zeros(c, rows * p, cols * p) };
            let patches: Vec<Cube> = extract_patch_grid(&im, &base, p)
                .unwrap()
                .into_iter()
                .map(|s| s.target_patch)
                .collect();
            prop_assert_eq!(stitch_patches(&patches, rows, cols).unwrap(), im.bands);
        }

        #[test]
        fn baseline_is_order_invariant(seed in any::<u64>(), n in 1usize..7) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut images: Vec<SitsImage> = (0..n)
                .map(|i| {
                    let data = (0..2 * 4 * 4).map(|_| rng.random::<f32>()).collect();
                    SitsImage::new(Cube::from_vec(2, 4, 4, data).unwrap(), date(2017, 1, 1 + i as u32))
                })
                .collect();
            let a = compute_baseline(&SitsDataset::new(images.clone(), Role::Train).unwrap()).unwrap();
            images.shuffle(&mut rng);
            // Reassign dates so the shuffled contents land in a new chronological order.
            for (i, im) in images.iter_mut().enumerate() {
                im.date = date(2018, 1, 1 + i as u32);
            }
            let b = compute_baseline(&SitsDataset::new(images, Role::Train).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalized_values_stay_in_unit_range(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..3 * 8 * 8).map(|_| rng.random_range(-2.0f32..5.0)).collect();
            let ds = SitsDataset::new(
                vec![SitsImage::new(Cube::from_vec(3, 8, 8, data).unwrap(), date(2017, 1, 1))],
                Role::Train,
            ).unwrap();
            let stats = compute_norm_stats(&ds, false).unwrap();
            let once = normalize_dataset(&ds, &stats).unwrap();
            prop_assert!(once.images[0].bands.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            if let Ok(stats2) = compute_norm_stats(&once, false) {
                let twice = normalize_dataset(&once, &stats2).unwrap();
                prop_assert!(twice.images[0].bands.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn split_is_a_partition(n in 2usize..300, seed in any::<u64>(), f in 0.05f64..0.95) {
            let (tr, va) = split_train_val((0..n).collect::<Vec<_>>(), f, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(va.iter()).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!tr.is_empty() && !va.is_empty());
        }
    }

    #[test]
    fn different_seeds_give_different_splits() {
        let a = split_train_val((0..50).collect::<Vec<_>>(), 0.2, 1).unwrap();
        let b = split_train_val((0..50).collect::<Vec<_>>(), 0.2, 2).unwrap();
        assert_ne!(a.1, b.1);
    }
}
