//! Checkpoint persistence: raw little-endian weights, a JSON manifest, and a
//! probe vector that pins forward outputs across save/load.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, SeasonalUNet, HEAD_INPUT_ORDER, INIT_SCHEME, SKIP_ORDER};
use super::train::{EpochRecord, TrainHyperparams};
use crate::data::NormStats;
use crate::encodings::EncodingScheme;
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_to_string, sha256_hex};

pub const WEIGHTS_FILE: &str = "model.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROBE_FILE: &str = "probe.json";
pub const FORMAT_VERSION: u32 = 1;

const PROBE_SEED: u64 = 0x5eed_0f_9a7c4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub encoding: EncodingScheme,
    pub encoding_order: Vec<String>,
    pub skip_order: String,
    pub head_input_order: String,
    pub init: String,
    pub init_seed: u64,
    pub param_count: usize,
    pub weights_sha256: String,
    pub norm_stats_digest: String,
    pub hyperparams: TrainHyperparams,
    pub history: Vec<EpochRecord>,
    #[serde(default)]
    pub run_config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub seed: u64,
    pub enc: Vec<f32>,
    pub output: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SeasonalUNet<f32>,
    pub manifest: Manifest,
}

/// SHA-256 of the compact JSON form of the stats.
pub fn norm_stats_digest(stats: &NormStats) -> String {
    sha256_hex(serde_json::to_string(stats).expect("stats serialize").as_bytes())
}

fn weights_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

fn probe_input(config: &ModelConfig, seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.in_channels * config.patch * config.patch;
    let x = (0..n).map(|_| rng.random::<f32>()).collect();
    let enc = (0..config.enc_channels).map(|_| rng.random::<f32>()).collect();
    (x, enc)
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: SeasonalUNet<f32>,
        encoding: EncodingScheme,
        init_seed: u64,
        stats: &NormStats,
        hyperparams: TrainHyperparams,
        history: Vec<EpochRecord>,
        run_config_hash: Option<String>,
    ) -> Result<Self> {
        let config = *model.config();
        if encoding.channels() != config.enc_channels {
            return Err(Error::Checkpoint(format!(
                "encoding scheme has {} channels, model takes {}",
                encoding.channels(),
                config.enc_channels
            )));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config,
            encoding,
            encoding_order: encoding.channel_order(),
            skip_order: SKIP_ORDER.into(),
            head_input_order: HEAD_INPUT_ORDER.into(),
            init: INIT_SCHEME.into(),
            init_seed,
            param_count: model.count_parameters(),
            weights_sha256: sha256_hex(&weights_bytes(model.params())),
            norm_stats_digest: norm_stats_digest(stats),
            hyperparams,
            history,
            run_config_hash,
        };
        Ok(Checkpoint { model, manifest })
    }

    pub fn probe(&self) -> Result<Probe> {
        let (x, enc) = probe_input(self.model.config(), PROBE_SEED);
        let output = self.model.forward(&x, &enc, self.model.config().patch)?;
        Ok(Probe {
            seed: PROBE_SEED,
            enc,
            output,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        atomic_write(&dir.join(WEIGHTS_FILE), &weights_bytes(self.model.params()))?;
        atomic_write(
            &dir.join(PROBE_FILE),
            serde_json::to_string(&self.probe()?)?.as_bytes(),
        )?;
        // Manifest last: its presence marks a complete checkpoint.
        atomic_write(
            &dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)?.as_bytes(),
        )
    }

    /// Loads and verifies weights hash and probe outputs.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::Checkpoint(format!(
                "no checkpoint manifest at {}",
                manifest_path.display()
            )));
        }
        let manifest: Manifest = serde_json::from_str(&read_to_string(&manifest_path)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        if manifest.encoding.channel_order() != manifest.encoding_order {
            return Err(Error::Checkpoint(format!(
                "encoding order {:?} is not the order this build produces",
                manifest.encoding_order
            )));
        }
        let wpath = dir.join(WEIGHTS_FILE);
        let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        if sha256_hex(&bytes) != manifest.weights_sha256 {
            return Err(Error::Checkpoint("weights hash does not match manifest".into()));
        }
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint("truncated weights blob".into()));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let model = SeasonalUNet::from_params(manifest.config, params)?;
        let ckpt = Checkpoint { model, manifest };

        let stored: Probe = serde_json::from_str(&read_to_string(&dir.join(PROBE_FILE))?)?;
        let fresh = ckpt.probe()?;
        let identical = stored.output.len() == fresh.output.len()
            && stored
                .output
                .iter()
                .zip(&fresh.output)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !identical {
            return Err(Error::Checkpoint(
                "probe outputs differ from the values recorded at save time".into(),
            ));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ckpt() -> Checkpoint {
        let config = ModelConfig {
            in_channels: 3,
            enc_channels: 4,
            widths: [4, 6, 8],
            patch: 8,
        };
        let stats = NormStats {
            p1: 0.0,
            p99: 1.0,
            channels: 3,
            per_channel: None,
        };
        Checkpoint::new(
            SeasonalUNet::new(config, 9).unwrap(),
            EncodingScheme::default(),
            9,
            &stats,
            TrainHyperparams::default(),
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn save_load_reproduces_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = small_ckpt();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ckpt.manifest);
        assert_eq!(back.model, ckpt.model);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        assert_eq!(manifest["encoding_order"][0], "t_sin");
        assert_eq!(manifest["encoding_order"][3], "p_col");
    }

    #[test]
    fn corrupted_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        small_ckpt().save(dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
