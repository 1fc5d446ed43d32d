//! The conditional UNet, its training loop, and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

use rayon::prelude::*;

pub use checkpoint::{norm_stats_digest, Checkpoint, Manifest};
pub use layers::Real;
pub use model::{ModelConfig, SeasonalUNet};
pub use train::{train, EpochRecord, Example, Loss, TrainHyperparams};

use crate::cube::Cube;
use crate::data::{baseline_patches, patch_grid_dims, stitch_patches, BaselineImage, PatchSample};
use crate::encodings::EncodingScheme;
use crate::error::{Error, Result};

/// Pairs patch samples with their encoding values.
pub fn examples_from_samples<'a>(
    samples: &'a [PatchSample],
    scheme: &EncodingScheme,
    rows: usize,
    cols: usize,
) -> Result<Vec<Example<'a>>> {
    samples
        .iter()
        .map(|s| {
            let enc = scheme
                .values(s.day_of_year, s.row, s.col, rows, cols)?
                .into_iter()
                .map(|v| v as f32)
                .collect();
            Ok(Example {
                baseline: s.baseline_patch.as_slice(),
                target: s.target_patch.as_slice(),
                enc,
            })
        })
        .collect()
}

/// Expected appearance of the whole region on `day_of_year`, assembled patch by patch.
pub fn generate_image(
    model: &SeasonalUNet<f32>,
    scheme: &EncodingScheme,
    baseline: &BaselineImage,
    day_of_year: u16,
) -> Result<Cube> {
    let cfg = model.config();
    let b = &baseline.bands;
    if b.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "baseline has {} channels, model expects {}",
            b.channels(),
            cfg.in_channels
        )));
    }
    if scheme.channels() != cfg.enc_channels {
        return Err(Error::Shape(format!(
            "encoding scheme has {} channels, model expects {}",
            scheme.channels(),
            cfg.enc_channels
        )));
    }
    let p = cfg.patch;
    let (rows, cols) = patch_grid_dims(b.height(), b.width(), p)?;
    let patches = baseline_patches(baseline, p)?;
    let outputs: Vec<Cube> = patches
        .par_iter()
        .enumerate()
        .map(|(i, patch)| {
            let (row, col) = (i / cols, i % cols);
            let enc: Vec<f32> = scheme
                .values(day_of_year, row, col, rows, cols)?
                .into_iter()
                .map(|v| v as f32)
                .collect();
            let y = model.forward(patch.as_slice(), &enc, p)?;
            Cube::from_vec(cfg.in_channels, p, p, y)
        })
        .collect::<Result<_>>()?;
    stitch_patches(&outputs, rows, cols)
}
