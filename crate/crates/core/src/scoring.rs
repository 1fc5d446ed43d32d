//! Structural similarity between generated and observed images, and the
//! structural-difference anomaly score and hazard map derived from it.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{Cube, Heatmap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderMode {
    /// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
    Reflect,
    /// SSIM only where the window fits, then nearest-valid replication outward.
    ValidReplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Use `k1`, `k2` directly as the stabilizing constants instead of `(k·L)²`.
    pub raw_k_constants: bool,
    pub border: BorderMode,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            raw_k_constants: false,
            border: BorderMode::Reflect,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window {} must be odd",
                self.window
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "SSIM sigma, k1, k2 and dynamic range must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(C1, C2)` stabilizing constants.
    pub fn constants(&self) -> (f64, f64) {
        if self.raw_k_constants {
            (self.k1, self.k2)
        } else {
            (
                (self.k1 * self.dynamic_range).powi(2),
                (self.k2 * self.dynamic_range).powi(2),
            )
        }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half-sample symmetric reflection of an index into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn filter_reflect(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                s += kv * row[reflect_index(x as isize + j as isize - r, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (j, &kv) in k.iter().enumerate() {
            let sy = reflect_index(y as isize + j as isize - r, h);
            let src_row = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Filter over the valid region only: output is `(h-2r) × (w-2r)`.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (vh, vw) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            tmp[y * vw + x] = k.iter().enumerate().map(|(j, &kv)| kv * src[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            out[y * vw + x] = k
                .iter()
                .enumerate()
                .map(|(j, &kv)| kv * tmp[(y + j) * vw + x])
                .sum();
        }
    }
    out
}

fn ssim_from_moments(
    mu_x: f64,
    mu_y: f64,
    exx: f64,
    eyy: f64,
    exy: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let vx = exx - mu_x * mu_x;
    let vy = eyy - mu_y * mu_y;
    let cov = exy - mu_x * mu_y;
    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (vx + vy + c2))
}

/// Per-pixel SSIM of one channel; the map always has the input's shape.
pub fn ssim_map_channel(
    pred: &[f32],
    obs: &[f32],
    h: usize,
    w: usize,
    params: &SsimParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if pred.len() != h * w || obs.len() != h * w {
        return Err(Error::Shape(format!(
            "SSIM inputs of {} and {} values for a {h}x{w} map",
            pred.len(),
            obs.len()
        )));
    }
    let k = gaussian_kernel(params.window, params.gaussian_sigma);
    let (c1, c2) = params.constants();
    let x: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    match params.border {
        BorderMode::Reflect => {
            let f = |s: &[f64]| filter_reflect(s, h, w, &k);
            let (mx, my, exx, eyy, exy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
            Ok((0..h * w)
                .map(|i| ssim_from_moments(mx[i], my[i], exx[i], eyy[i], exy[i], c1, c2))
                .collect())
        }
        BorderMode::ValidReplicate => {
            if h < params.window || w < params.window {
                return Err(Error::Shape(format!(
                    "{h}x{w} image is smaller than the {0}x{0} window",
                    params.window
                )));
            }
            let f = |s: &[f64]| filter_valid(s, h, w, &k);
            let (mx, my, exx, eyy, exy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
            let r = params.window / 2;
            let (vh, vw) = (h - 2 * r, w - 2 * r);
            let valid: Vec<f64> = (0..vh * vw)
                .map(|i| ssim_from_moments(mx[i], my[i], exx[i], eyy[i], exy[i], c1, c2))
                .collect();
            let mut out = Vec::with_capacity(h * w);
            for yy in 0..h {
                let vy = yy.saturating_sub(r).min(vh - 1);
                for xx in 0..w {
                    let vx = xx.saturating_sub(r).min(vw - 1);
                    out.push(valid[vy * vw + vx]);
                }
            }
            Ok(out)
        }
    }
}

/// SSIM map of every channel, in channel order.
pub fn ssim_maps(pred: &Cube, obs: &Cube, params: &SsimParams) -> Result<Vec<Vec<f64>>> {
    pred.ensure_same_shape(obs)?;
    let (c, h, w) = pred.shape();
    (0..c)
        .into_par_iter()
        .map(|ch| ssim_map_channel(pred.plane(ch), obs.plane(ch), h, w, params))
        .collect()
}

/// Mean SSIM over all pixels and channels.
pub fn ssim_score(pred: &Cube, obs: &Cube, params: &SsimParams) -> Result<f64> {
    let maps = ssim_maps(pred, obs, params)?;
    Ok(mean_of_maps(&maps))
}

fn mean_of_maps(maps: &[Vec<f64>]) -> f64 {
    let per_channel: Vec<f64> = maps
        .iter()
        .map(|m| m.iter().sum::<f64>() / m.len() as f64)
        .collect();
    per_channel.iter().sum::<f64>() / per_channel.len() as f64
}

/// `(1 - SSIM) / 2` of the image-wide SSIM.
pub fn sdim_from_ssim(ssim: f64) -> f64 {
    (1.0 - ssim) / 2.0
}

/// Per-pixel `clamp(1 - ssim, 0, 1)²`.
pub fn sdim_pixel(ssim_avg: f64) -> f64 {
    (1.0 - ssim_avg).clamp(0.0, 1.0).powi(2)
}

pub fn sdim_score(pred: &Cube, obs: &Cube, params: &SsimParams) -> Result<f64> {
    Ok(sdim_from_ssim(ssim_score(pred, obs, params)?))
}

fn map_from_channels(maps: &[Vec<f64>], h: usize, w: usize) -> Heatmap {
    let c = maps.len() as f64;
    let data = (0..h * w)
        .map(|i| {
            let avg = maps.iter().map(|m| m[i]).sum::<f64>() / c;
            sdim_pixel(avg) as f32
        })
        .collect();
    Heatmap::new(h, w, data)
}

pub fn sdim_map(pred: &Cube, obs: &Cube, params: &SsimParams) -> Result<Heatmap> {
    let maps = ssim_maps(pred, obs, params)?;
    Ok(map_from_channels(&maps, pred.height(), pred.width()))
}

/// Score and map from one pass over the channel SSIM maps.
pub fn sdim(pred: &Cube, obs: &Cube, params: &SsimParams) -> Result<(f64, Heatmap)> {
    let maps = ssim_maps(pred, obs, params)?;
    let score = sdim_from_ssim(mean_of_maps(&maps));
    Ok((score, map_from_channels(&maps, pred.height(), pred.width())))
}

pub fn mae_score(pred: &Cube, obs: &Cube) -> Result<f64> {
    pred.ensure_same_shape(obs)?;
    let per_channel: Vec<f64> = (0..pred.channels())
        .map(|c| {
            pred.plane(c)
                .iter()
                .zip(obs.plane(c))
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum::<f64>()
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / pred.as_slice().len() as f64)
}

/// Channel-mean absolute difference per pixel, clamped to `[0, 1]`.
pub fn mae_map(pred: &Cube, obs: &Cube) -> Result<Heatmap> {
    pred.ensure_same_shape(obs)?;
    let (c, h, w) = pred.shape();
    let data = (0..h * w)
        .map(|i| {
            let s: f64 = (0..c)
                .map(|ch| (pred.plane(ch)[i] as f64 - obs.plane(ch)[i] as f64).abs())
                .sum();
            (s / c as f64).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Heatmap::new(h, w, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Sdim,
    Mae,
}

/// Image-level score and pixel-level map under the chosen scorer.
pub fn score_image(pred: &Cube, obs: &Cube, scorer: Scorer, params: &SsimParams) -> Result<(f64, Heatmap)> {
    match scorer {
        Scorer::Sdim => sdim(pred, obs, params),
        Scorer::Mae => Ok((mae_score(pred, obs)?, mae_map(pred, obs)?)),
    }
}

/// Per-image monitoring outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    pub date: NaiveDate,
    pub day_of_year: u16,
    pub score: f64,
    pub threshold: f64,
    pub residual: f64,
    pub flag: bool,
    pub heatmap: Heatmap,
}
