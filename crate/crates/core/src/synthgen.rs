//! Deterministic synthetic image time series with planted hazards.
//!
//! A Voronoi map assigns every pixel to a land class. Each class has a
//! per-channel base reflectance and a seasonal phase; pixel values follow
//! `base + amp·sin(2π(t − φ)/365) + noise`. The last `test_years` years carry
//! the configured hazards.

use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::Cube;
use crate::data::{Role, SitsDataset, SitsImage};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_with, atomic_write};
use crate::raster::write_raster;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const BASE_RANGE: (f64, f64) = (0.15, 0.45);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    AbruptBlob,
    GradualGrowth,
    OutOfSeasonShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub kind: HazardKind,
    /// Day of year, within each test year, at which the hazard starts.
    pub onset_day: u16,
    pub duration_days: u16,
    /// Disc footprint `(row, col)` centre.
    pub center: [usize; 2],
    pub radius: usize,
    pub magnitude: f64,
    /// Season offset of the out-of-season signal.
    #[serde(default = "default_shift")]
    pub shift_days: f64,
}

fn default_shift() -> f64 {
    182.0
}

impl HazardSpec {
    pub fn is_active(&self, day_of_year: u16) -> bool {
        day_of_year >= self.onset_day && day_of_year <= self.onset_day + self.duration_days
    }

    /// Fraction of the final footprint covered on `day_of_year`.
    pub fn coverage(&self, day_of_year: u16) -> f64 {
        if !self.is_active(day_of_year) {
            return 0.0;
        }
        match self.kind {
            HazardKind::GradualGrowth if self.duration_days > 0 => {
                (day_of_year - self.onset_day) as f64 / self.duration_days as f64
            }
            _ => 1.0,
        }
    }

    /// Footprint pixels ordered by distance from the centre (then by index).
    pub fn footprint(&self, height: usize, width: usize) -> Result<Vec<usize>> {
        let [cy, cx] = self.center;
        if cy < self.radius || cx < self.radius || cy + self.radius >= height || cx + self.radius >= width
        {
            return Err(Error::InvalidArgument(format!(
                "hazard footprint centre {:?} radius {} outside {height}x{width}",
                self.center, self.radius
            )));
        }
        let r2 = (self.radius * self.radius) as i64;
        let mut px: Vec<(i64, usize)> = vec![];
        for y in cy - self.radius..=cy + self.radius {
            for x in cx - self.radius..=cx + self.radius {
                let d2 = (y as i64 - cy as i64).pow(2) + (x as i64 - cx as i64).pow(2);
                if d2 <= r2 {
                    px.push((d2, y * width + x));
                }
            }
        }
        px.sort_unstable();
        Ok(px.into_iter().map(|(_, i)| i).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_land_classes: usize,
    pub seasonal_amp: f64,
    pub noise_sigma: f64,
    /// Relative seasonal swing of the noise std, in `[0, 1)`; 0 keeps it constant.
    pub noise_seasonality: f64,
    pub noise_phase_days: f64,
    pub cadence_days: u16,
    pub train_years: u16,
    pub test_years: u16,
    pub start_year: i32,
    pub seed: u64,
    pub hazards: Vec<HazardSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            channels: 10,
            n_land_classes: 6,
            seasonal_amp: 0.1,
            noise_sigma: 0.004,
            noise_seasonality: 0.6,
            noise_phase_days: 0.0,
            cadence_days: 10,
            train_years: 3,
            test_years: 1,
            start_year: 2020,
            seed: 7,
            hazards: default_hazards(),
        }
    }
}

/// One hazard of each kind, spread over the year with hazard-free gaps.
pub fn default_hazards() -> Vec<HazardSpec> {
    vec![
        HazardSpec {
            kind: HazardKind::AbruptBlob,
            onset_day: 55,
            duration_days: 50,
            center: [36, 40],
            radius: 14,
            magnitude: 0.4,
            shift_days: default_shift(),
        },
        HazardSpec {
            kind: HazardKind::GradualGrowth,
            onset_day: 161,
            duration_days: 60,
            center: [84, 84],
            radius: 20,
            magnitude: 0.4,
            shift_days: default_shift(),
        },
        HazardSpec {
            kind: HazardKind::OutOfSeasonShift,
            onset_day: 275,
            duration_days: 40,
            center: [92, 30],
            radius: 16,
            magnitude: 0.4,
            shift_days: default_shift(),
        },
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return bad(format!(
                "scene {}x{} must be a positive multiple of 32",
                self.height, self.width
            ));
        }
        if self.channels == 0 || self.n_land_classes == 0 || self.cadence_days == 0 {
            return bad("channels, land classes and cadence must be positive".into());
        }
        if self.train_years == 0 || self.test_years == 0 {
            return bad("at least one train and one test year are required".into());
        }
        if !(self.seasonal_amp >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.noise_seasonality) {
            return bad(format!(
                "noise seasonality {} outside [0, 1)",
                self.noise_seasonality
            ));
        }
        for h in &self.hazards {
            h.footprint(self.height, self.width)?;
            if !(h.magnitude >= 0.0) || h.onset_day == 0 || h.onset_day > 366 {
                return bad(format!("invalid hazard {h:?}"));
            }
        }
        Ok(())
    }

    /// Acquisition dates of one calendar year: Jan 1 and every `cadence_days` after.
    pub fn year_dates(&self, year: i32) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
        (0..)
            .map(|k| start + Days::new(k * self.cadence_days as u64))
            .take_while(|d| d.year() == year)
            .collect()
    }

    pub fn noise_sigma_at(&self, day_of_year: f64) -> f64 {
        self.noise_sigma
            * (1.0
                + self.noise_seasonality
                    * libm::sin(TWO_PI * (day_of_year - self.noise_phase_days) / 365.0))
    }
}

/// Land-class layout and per-class signal parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub class_map: Vec<usize>,
    /// `base[class][channel]`.
    pub base: Vec<Vec<f64>>,
    /// Seasonal phase of each class, in days.
    pub phase: Vec<f64>,
}

fn seasonal(t: f64, phase: f64) -> f64 {
    libm::sin(TWO_PI * (t - phase) / 365.0)
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, w) = (config.height, config.width);
        let seeds: Vec<(f64, f64)> = (0..config.n_land_classes)
            .map(|_| (rng.random::<f64>() * h as f64, rng.random::<f64>() * w as f64))
            .collect();
        let class_map = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                (0..seeds.len())
                    .min_by(|&a, &b| {
                        let d = |k: usize| (seeds[k].0 - y).powi(2) + (seeds[k].1 - x).powi(2);
                        d(a).total_cmp(&d(b))
                    })
                    .expect("at least one class")
            })
            .collect();
        let base = (0..config.n_land_classes)
            .map(|_| {
                (0..config.channels)
                    .map(|_| rng.random_range(BASE_RANGE.0..BASE_RANGE.1))
                    .collect()
            })
            .collect();
        let phase = (0..config.n_land_classes)
            .map(|_| rng.random_range(0.0..365.0))
            .collect();
        Ok(Scene {
            config,
            class_map,
            base,
            phase,
        })
    }

    /// Noise-free, hazard-free image for `day_of_year`.
    pub fn expected(&self, day_of_year: f64) -> Cube {
        let c = &self.config;
        let mut cube = Cube::zeros(c.channels, c.height, c.width);
        let season: Vec<f64> = self
            .phase
            .iter()
            .map(|&p| c.seasonal_amp * seasonal(day_of_year, p))
            .collect();
        for ch in 0..c.channels {
            for (v, &k) in cube.plane_mut(ch).iter_mut().zip(&self.class_map) {
                *v = (self.base[k][ch] + season[k]) as f32;
            }
        }
        cube
    }

    /// Adds `spec` to `image` for `day_of_year`; returns the image and the
    /// pixels it actually changed.
    pub fn inject_hazard(
        &self,
        image: &Cube,
        spec: &HazardSpec,
        day_of_year: u16,
    ) -> Result<(Cube, Vec<bool>)> {
        let c = &self.config;
        if image.shape() != (c.channels, c.height, c.width) {
            return Err(Error::Shape(format!(
                "image {:?} does not match the scene",
                image.shape()
            )));
        }
        let pixels = spec.footprint(c.height, c.width)?;
        let mut out = image.clone();
        let mut mask = vec![false; c.height * c.width];
        let n_active = (spec.coverage(day_of_year) * pixels.len() as f64).round() as usize;
        let t = day_of_year as f64;
        for &i in &pixels[..n_active] {
            let delta = match spec.kind {
                HazardKind::AbruptBlob | HazardKind::GradualGrowth => spec.magnitude,
                HazardKind::OutOfSeasonShift => {
                    let p = self.phase[self.class_map[i]];
                    c.seasonal_amp * (seasonal(t + spec.shift_days, p) - seasonal(t, p))
                        + spec.magnitude
                }
            };
            let mut changed = false;
            for ch in 0..c.channels {
                let before = out.plane(ch)[i];
                let after = (before as f64 + delta) as f32;
                out.plane_mut(ch)[i] = after;
                changed |= after != before;
            }
            mask[i] = changed;
        }
        Ok((out, mask))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub date: NaiveDate,
    pub is_hazard: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub train: SitsDataset,
    pub test: SitsDataset,
    pub labels: Vec<LabelRow>,
    /// Changed-pixel mask of each test image, in test-date order.
    pub masks: Vec<Vec<bool>>,
}

pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    let scene = Scene::new(config.clone())?;
    let c = &scene.config;
    let n_years = c.train_years + c.test_years;
    let dated: Vec<(NaiveDate, bool)> = (0..n_years)
        .flat_map(|k| {
            let test = k >= c.train_years;
            c.year_dates(c.start_year + k as i32)
                .into_iter()
                .map(move |d| (d, test))
        })
        .collect();

    let rendered: Vec<(SitsImage, bool, Vec<bool>)> = dated
        .par_iter()
        .enumerate()
        .map(|(idx, &(date, test))| {
            let doy = date.ordinal() as u16;
            let mut img = scene.expected(doy as f64);
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(idx as u64 + 1);
            let sigma = c.noise_sigma_at(doy as f64);
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for v in img.as_mut_slice() {
                    *v = (*v as f64 + normal.sample(&mut rng)) as f32;
                }
            }
            let mut mask = vec![false; c.height * c.width];
            if test {
                for h in c.hazards.iter().filter(|h| h.is_active(doy)) {
                    let (next, m) = scene.inject_hazard(&img, h, doy)?;
                    img = next;
                    mask.iter_mut().zip(&m).for_each(|(a, &b)| *a |= b);
                }
            }
            Ok((SitsImage::new(img, date), test, mask))
        })
        .collect::<Result<_>>()?;

    let mut train = vec![];
    let mut test = vec![];
    let mut labels = vec![];
    let mut masks = vec![];
    for (img, is_test, mask) in rendered {
        if is_test {
            labels.push(LabelRow {
                date: img.date,
                is_hazard: mask.iter().any(|&m| m),
            });
            masks.push(mask);
            test.push(img);
        } else {
            train.push(img);
        }
    }
    Ok(SyntheticScene {
        train: SitsDataset::new(train, Role::Train)?,
        test: SitsDataset::new(test, Role::Test)?,
        scene,
        labels,
        masks,
    })
}

pub const LABELS_FILE: &str = "labels.csv";
pub const SCENE_FILE: &str = "scene.json";

pub fn raster_name(date: NaiveDate) -> String {
    format!("{date}.tif")
}

pub fn labels_csv(labels: &[LabelRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for l in labels {
        w.serialize(l)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    })?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `train/`, `test/`, `masks/`, `labels.csv` and `scene.json` under `dir`.
pub fn write_scene(dir: &Path, s: &SyntheticScene) -> Result<()> {
    let write_set = |sub: &str, images: &[SitsImage]| -> Result<()> {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        images.par_iter().try_for_each(|im| {
            atomic_with(&d.join(raster_name(im.date)), |p| write_raster(p, &im.bands))
        })
    };
    write_set("train", &s.train.images)?;
    write_set("test", &s.test.images)?;
    let c = &s.scene.config;
    let masks: Vec<SitsImage> = s
        .test
        .images
        .iter()
        .zip(&s.masks)
        .map(|(im, m)| {
            let data = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            Cube::from_vec(1, c.height, c.width, data).map(|cube| SitsImage::new(cube, im.date))
        })
        .collect::<Result<_>>()?;
    write_set("masks", &masks)?;
    atomic_write(&dir.join(LABELS_FILE), labels_csv(&s.labels)?.as_bytes())?;
    atomic_write(
        &dir.join(SCENE_FILE),
        serde_json::to_string_pretty(c)?.as_bytes(),
    )
}
