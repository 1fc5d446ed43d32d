//! Seasonal and positional conditioning values and their constant-plane expansion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cube::Cube;
use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// Day 366 of leap years is folded onto day 365.
pub fn encoding_day(day_of_year: u16) -> u16 {
    day_of_year.min(365)
}

/// `(sin, cos)` of `2πt/365` for any real `t`.
pub fn cyclical(t: f64) -> (f64, f64) {
    let angle = 2.0 * PI * t / DAYS_PER_YEAR;
    (angle.sin(), angle.cos())
}

pub fn seasonal_encoding(day_of_year: u16) -> Result<(f64, f64)> {
    if !(1..=365).contains(&day_of_year) {
        return Err(Error::InvalidArgument(format!(
            "day of year {day_of_year} outside 1..=365"
        )));
    }
    Ok(cyclical(day_of_year as f64))
}

/// Normalized day of year, 0 on January 1st and 1 on day 365.
pub fn linear_time(day_of_year: u16) -> Result<f64> {
    if !(1..=365).contains(&day_of_year) {
        return Err(Error::InvalidArgument(format!(
            "day of year {day_of_year} outside 1..=365"
        )));
    }
    Ok((day_of_year as f64 - 1.0) / 364.0)
}

pub fn positional_encoding(row: usize, col: usize, n_patches: usize) -> Result<(f64, f64)> {
    positional_encoding_grid(row, col, n_patches, n_patches)
}

/// Row and column normalized by the grid size along their own axis.
pub fn positional_encoding_grid(
    row: usize,
    col: usize,
    rows: usize,
    cols: usize,
) -> Result<(f64, f64)> {
    if row >= rows || col >= cols {
        return Err(Error::InvalidArgument(format!(
            "patch ({row}, {col}) outside a {rows}x{cols} grid"
        )));
    }
    Ok((row as f64 / rows as f64, col as f64 / cols as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingVector {
    pub t_sin: f64,
    pub t_cos: f64,
    pub p_row: f64,
    pub p_col: f64,
}

impl EncodingVector {
    pub fn new(day_of_year: u16, row: usize, col: usize, n_patches: usize) -> Result<Self> {
        let (t_sin, t_cos) = seasonal_encoding(day_of_year)?;
        let (p_row, p_col) = positional_encoding(row, col, n_patches)?;
        Ok(EncodingVector {
            t_sin,
            t_cos,
            p_row,
            p_col,
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.t_sin, self.t_cos, self.p_row, self.p_col]
    }
}

/// Four constant planes in the fixed order `(t_sin, t_cos, p_row, p_col)`.
pub fn encoding_channels(vec: &EncodingVector, size: usize) -> Cube {
    expand_channels(&vec.as_array(), size)
}

/// One constant `size × size` plane per value.
pub fn expand_channels(values: &[f64], size: usize) -> Cube {
    let mut cube = Cube::zeros(values.len(), size, size);
    for (c, &v) in values.iter().enumerate() {
        cube.plane_mut(c).fill(v as f32);
    }
    cube
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    Cyclical,
    Linear,
}

/// Which conditioning channels a model consumes, and in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingScheme {
    pub time: TimeEncoding,
    pub position: bool,
}

impl Default for EncodingScheme {
    fn default() -> Self {
        EncodingScheme {
            time: TimeEncoding::Cyclical,
            position: true,
        }
    }
}

impl EncodingScheme {
    pub fn channels(&self) -> usize {
        let t = match self.time {
            TimeEncoding::Cyclical => 2,
            TimeEncoding::Linear => 1,
        };
        t + if self.position { 2 } else { 0 }
    }

    /// Channel names in model input order; persisted in checkpoint manifests.
    pub fn channel_order(&self) -> Vec<String> {
        let mut names: Vec<&str> = match self.time {
            TimeEncoding::Cyclical => vec!["t_sin", "t_cos"],
            TimeEncoding::Linear => vec!["t_lin"],
        };
        if self.position {
            names.extend(["p_row", "p_col"]);
        }
        names.into_iter().map(String::from).collect()
    }

    pub fn values(
        &self,
        day_of_year: u16,
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Vec<f64>> {
        let day = encoding_day(day_of_year);
        let mut v = match self.time {
            TimeEncoding::Cyclical => {
                let (s, c) = seasonal_encoding(day)?;
                vec![s, c]
            }
            TimeEncoding::Linear => vec![linear_time(day)?],
        };
        if self.position {
            let (r, c) = positional_encoding_grid(row, col, rows, cols)?;
            v.extend([r, c]);
        }
        Ok(v)
    }
}
