//! Self-supervised change monitoring for satellite image time series.
//!
//! A conditional UNet learns to translate a region's median "baseline" image
//! into its expected appearance on any day of the year. New observations are
//! compared to the generated expectation with a structural-difference score,
//! and a seasonally varying threshold turns scores into hazard flags.

pub mod cube;
pub mod data;
pub mod encodings;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scoring;
pub mod synthgen;
pub mod threshold;

pub use cube::{Cube, Heatmap};
pub use error::{Error, Result};
