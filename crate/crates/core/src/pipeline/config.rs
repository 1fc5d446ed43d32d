//! Run configuration: TOML file, `key=value` overrides, and artifact layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BandSpec, DEFAULT_CHANNELS, DEFAULT_PATCH};
use crate::encodings::{EncodingScheme, TimeEncoding};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, sha256_hex};
use crate::nn::TrainHyperparams;
use crate::scoring::{Scorer, SsimParams};
use crate::synthgen::SceneConfig;
use crate::threshold::DEFAULT_MULTIPLIER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_position: bool,
    pub linear_time: bool,
    pub mae_score: bool,
    pub flat_threshold: bool,
}

impl Ablation {
    pub fn encoding_scheme(&self) -> EncodingScheme {
        EncodingScheme {
            time: if self.linear_time {
                TimeEncoding::Linear
            } else {
                TimeEncoding::Cyclical
            },
            position: !self.no_position,
        }
    }

    pub fn scorer(&self) -> Scorer {
        if self.mae_score {
            Scorer::Mae
        } else {
            Scorer::Sdim
        }
    }

    /// Short name of the variant, e.g. `full` or `no-position+flat-threshold`.
    pub fn variant(&self) -> String {
        let names: Vec<&str> = [
            (self.no_position, "no-position"),
            (self.linear_time, "linear-time"),
            (self.mae_score, "mae-score"),
            (self.flat_threshold, "flat-threshold"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            "full".into()
        } else {
            names.join("+")
        }
    }
}

/// Everything a run needs. `seed` drives weight init, the train/validation
/// split and batch shuffling; `synth.seed` drives scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub artifact_dir: PathBuf,
    /// Defaults to `<data_dir>/train`.
    pub train_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/test`.
    pub test_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/labels.csv`.
    pub labels: Option<PathBuf>,
    pub channels: usize,
    pub band_order: Option<Vec<usize>>,
    pub patch: usize,
    pub widths: [usize; 3],
    pub per_channel_stats: bool,
    pub val_fraction: f64,
    pub threshold_multiplier: f64,
    pub seed: u64,
    pub train: TrainHyperparams,
    pub ssim: SsimParams,
    pub ablation: Ablation,
    pub synth: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            artifact_dir: PathBuf::from("artifacts"),
            train_dir: None,
            test_dir: None,
            labels: None,
            channels: DEFAULT_CHANNELS,
            band_order: None,
            patch: DEFAULT_PATCH,
            widths: [32, 64, 128],
            per_channel_stats: false,
            val_fraction: 0.1,
            threshold_multiplier: DEFAULT_MULTIPLIER,
            seed: 0,
            train: TrainHyperparams::default(),
            ssim: SsimParams::default(),
            ablation: Ablation::default(),
            synth: SceneConfig::default(),
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key such as `train.epochs` inside `table`.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads an optional TOML file, applies overrides in order, and validates.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if let Some(order) = &self.band_order {
            if order.len() != self.channels {
                return Err(Error::Config(format!(
                    "band_order lists {} bands for {} channels",
                    order.len(),
                    self.channels
                )));
            }
        }
        if !(self.threshold_multiplier > 0.0) {
            return Err(Error::Config("threshold_multiplier must be positive".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.ssim.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.train_dir.clone().unwrap_or_else(|| self.data_dir.join("train"))
    }

    pub fn test_dir(&self) -> PathBuf {
        self.test_dir.clone().unwrap_or_else(|| self.data_dir.join("test"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels
            .clone()
            .unwrap_or_else(|| self.data_dir.join(crate::synthgen::LABELS_FILE))
    }

    pub fn band_spec(&self) -> BandSpec {
        BandSpec {
            channels: self.channels,
            order: self.band_order.clone(),
            patch: self.patch,
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts {
            root: self.artifact_dir.clone(),
        }
    }
}

/// File layout inside the artifact directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }
    pub fn norm_stats(&self) -> PathBuf {
        self.root.join("norm_stats.json")
    }
    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline.tif")
    }
    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
    pub fn train_scores(&self) -> PathBuf {
        self.root.join("train_scores.csv")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_table(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn pr_curve(&self) -> PathBuf {
        self.root.join("pr_curve.csv")
    }
    pub fn resolved_config(&self, command: &str) -> PathBuf {
        self.root.join(format!("{command}.resolved.toml"))
    }
}
