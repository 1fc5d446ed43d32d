//! The five pipeline stages. Each reads and writes artifacts under the
//! configured artifact directory; errors carry the stage they came from.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{Artifacts, RunConfig};
use crate::data::{
    baseline_patches, compute_baseline, compute_norm_stats, extract_with_baseline_patches,
    load_sits_directory, normalize, normalize_dataset, patch_grid_dims, split_train_val,
    BaselineImage, NormStats, Role, SitsImage,
};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, pr_curve, pr_curve_csv, LabeledScore, Report};
use crate::fsutil::{atomic_with, atomic_write, read_to_string};
use crate::nn::{
    examples_from_samples, generate_image, norm_stats_digest, train, Checkpoint, EpochRecord,
    ModelConfig, SeasonalUNet, TrainHyperparams,
};
use crate::raster::{read_raster, write_raster};
use crate::render::{write_heatmap_png, write_heatmap_raster};
use crate::scoring::{score_image, AnomalyResult, Scorer, SsimParams};
use crate::synthgen::{generate_scene, raster_name, read_labels, write_scene, SyntheticScene};
use crate::threshold::ThresholdModel;

fn tag<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_resolved(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    let path = Artifacts {
        root: dir.to_path_buf(),
    }
    .resolved_config(command);
    atomic_write(&path, cfg.to_toml()?.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub param_count: usize,
    pub n_train_samples: usize,
    pub n_val_samples: usize,
}

/// Fits normalization, baseline and model on the training images.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let art = cfg.artifacts();
    let train_dir = cfg.train_dir();
    if !train_dir.is_dir() {
        return Err(Error::io(
            &train_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "training directory not found"),
        )
        .in_stage("load"));
    }
    let raw = tag("load", load_sits_directory(&train_dir, &cfg.band_spec(), Role::Train))?;
    log::info!("loaded {} training images from {}", raw.len(), train_dir.display());

    let stats = tag("normalize", compute_norm_stats(&raw, cfg.per_channel_stats))?;
    let norm = tag("normalize", normalize_dataset(&raw, &stats))?;
    drop(raw);
    let baseline = tag("baseline", compute_baseline(&norm))?;

    let scheme = cfg.ablation.encoding_scheme();
    let (samples, rows, cols) = tag("patches", {
        let b = &baseline.bands;
        patch_grid_dims(b.height(), b.width(), cfg.patch).and_then(|(rows, cols)| {
            let base = baseline_patches(&baseline, cfg.patch)?;
            let mut all = Vec::with_capacity(norm.len() * rows * cols);
            for im in &norm.images {
                all.extend(extract_with_baseline_patches(im, &base, cfg.patch)?);
            }
            Ok((all, rows, cols))
        })
    })?;
    drop(norm);
    let (tr, va) = tag("split", split_train_val(samples, cfg.val_fraction, cfg.seed))?;
    let tr_ex = tag("train", examples_from_samples(&tr, &scheme, rows, cols))?;
    let va_ex = tag("train", examples_from_samples(&va, &scheme, rows, cols))?;

    let model_cfg = ModelConfig {
        in_channels: cfg.channels,
        enc_channels: scheme.channels(),
        widths: cfg.widths,
        patch: cfg.patch,
    };
    let mut model = tag("train", SeasonalUNet::new(model_cfg, cfg.seed))?;
    let hp = TrainHyperparams {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    log::info!(
        "training {} parameters on {} patches ({} validation)",
        model.count_parameters(),
        tr_ex.len(),
        va_ex.len()
    );
    let history = tag("train", train(&mut model, &tr_ex, &va_ex, &hp))?;

    let ckpt = tag(
        "persist",
        Checkpoint::new(model, scheme, cfg.seed, &stats, hp, history.clone(), Some(cfg.hash()?)),
    )?;
    tag("persist", (|| {
        atomic_write(&art.norm_stats(), stats.to_json()?.as_bytes())?;
        atomic_with(&art.baseline(), |p| write_raster(p, &baseline.bands))?;
        ckpt.save(&art.checkpoint())?;
        write_resolved(cfg, &art.root, "train")
    })())?;
    Ok(TrainSummary {
        param_count: ckpt.manifest.param_count,
        history,
        n_train_samples: tr.len(),
        n_val_samples: va.len(),
    })
}

/// Trained model plus the inputs it was fitted with.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub stats: NormStats,
    pub baseline: BaselineImage,
}

/// Loads checkpoint, stats and baseline, and checks they belong together.
pub fn load_model(cfg: &RunConfig) -> Result<LoadedModel> {
    let art = cfg.artifacts();
    let checkpoint = Checkpoint::load(&art.checkpoint())?;
    let stats = NormStats::from_json(&read_to_string(&art.norm_stats())?)?;
    if norm_stats_digest(&stats) != checkpoint.manifest.norm_stats_digest {
        return Err(Error::Integrity(format!(
            "{} does not match the statistics the checkpoint was trained with",
            art.norm_stats().display()
        )));
    }
    let scheme = cfg.ablation.encoding_scheme();
    if checkpoint.manifest.encoding != scheme {
        return Err(Error::Integrity(format!(
            "checkpoint uses encoding {:?}, config asks for {:?}",
            checkpoint.manifest.encoding, scheme
        )));
    }
    let bands = read_raster(&art.baseline())?;
    let m = &checkpoint.manifest.config;
    if bands.channels() != m.in_channels || bands.channels() != cfg.channels {
        return Err(Error::Integrity(format!(
            "baseline has {} channels, checkpoint {} and config {}",
            bands.channels(),
            m.in_channels,
            cfg.channels
        )));
    }
    Ok(LoadedModel {
        checkpoint,
        stats,
        baseline: BaselineImage { bands },
    })
}

impl LoadedModel {
    /// Normalizes `image`, generates its expected counterpart and scores the pair.
    pub fn score(
        &self,
        image: &SitsImage,
        scorer: Scorer,
        ssim: &SsimParams,
    ) -> Result<(f64, crate::cube::Heatmap)> {
        let b = &self.baseline.bands;
        if image.bands.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "image {} is {:?}, the model's region is {:?}",
                image.date,
                image.bands.shape(),
                b.shape()
            )));
        }
        let obs = normalize(image, &self.stats)?;
        let pred = generate_image(
            &self.checkpoint.model,
            &self.checkpoint.manifest.encoding,
            &self.baseline,
            image.day_of_year,
        )?;
        score_image(&pred, &obs.bands, scorer, ssim)
    }
}

/// What the threshold was calibrated against; monitoring must match it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scorer: Scorer,
    pub ssim: SsimParams,
    pub weights_sha256: String,
    pub n_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainScoreRow {
    pub date: NaiveDate,
    pub day_of_year: u16,
    pub score: f64,
    pub threshold: f64,
}

/// Scores every training image and fits the decision threshold.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<ThresholdModel> {
    let art = cfg.artifacts();
    let model = tag("artifacts", load_model(cfg))?;
    let train = tag(
        "load",
        load_sits_directory(&cfg.train_dir(), &cfg.band_spec(), Role::Train),
    )?;
    let scorer = cfg.ablation.scorer();
    let scores: Vec<(NaiveDate, u16, f64)> = tag(
        "calibrate",
        train
            .images
            .iter()
            .map(|im| Ok((im.date, im.day_of_year, model.score(im, scorer, &cfg.ssim)?.0)))
            .collect(),
    )?;
    let threshold = tag("calibrate", {
        if cfg.ablation.flat_threshold {
            let s: Vec<f64> = scores.iter().map(|s| s.2).collect();
            ThresholdModel::fit_flat(&s, cfg.threshold_multiplier)
        } else {
            let s: Vec<(NaiveDate, f64)> = scores.iter().map(|s| (s.0, s.2)).collect();
            ThresholdModel::fit_seasonal(&s, cfg.threshold_multiplier)
        }
    })?;
    let rows: Vec<TrainScoreRow> = scores
        .iter()
        .map(|&(date, day_of_year, score)| TrainScoreRow {
            date,
            day_of_year,
            score,
            threshold: threshold.tau(day_of_year as f64),
        })
        .collect();
    let calibration = Calibration {
        scorer,
        ssim: cfg.ssim,
        weights_sha256: model.checkpoint.manifest.weights_sha256.clone(),
        n_scores: rows.len(),
    };
    tag("persist", (|| {
        atomic_write(&art.threshold(), threshold.to_json()?.as_bytes())?;
        atomic_write(
            &art.calibration(),
            serde_json::to_string_pretty(&calibration)?.as_bytes(),
        )?;
        write_csv(&art.train_scores(), &rows)?;
        write_resolved(cfg, &art.root, "calibrate")
    })())?;
    Ok(threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub score: f64,
    pub threshold: f64,
    pub residual: f64,
    pub flag: bool,
}

impl From<&AnomalyResult> for ScoreRow {
    fn from(r: &AnomalyResult) -> Self {
        ScoreRow {
            date: r.date,
            score: r.score,
            threshold: r.threshold,
            residual: r.residual,
            flag: r.flag,
        }
    }
}

/// Scores each new image against the calibrated threshold and writes the
/// score stream and heatmaps.
pub fn cmd_monitor(cfg: &RunConfig) -> Result<Vec<AnomalyResult>> {
    let art = cfg.artifacts();
    let (model, threshold) = tag("artifacts", (|| {
        let model = load_model(cfg)?;
        let threshold = ThresholdModel::from_json(&read_to_string(&art.threshold())?)?;
        let cal: Calibration = serde_json::from_str(&read_to_string(&art.calibration())?)?;
        if cal.scorer != cfg.ablation.scorer() || cal.ssim != cfg.ssim {
            return Err(Error::Integrity(format!(
                "threshold was calibrated with {:?} {:?}, config asks for {:?} {:?}",
                cal.scorer,
                cal.ssim,
                cfg.ablation.scorer(),
                cfg.ssim
            )));
        }
        if cal.weights_sha256 != model.checkpoint.manifest.weights_sha256 {
            return Err(Error::Integrity(
                "threshold was calibrated against different model weights".into(),
            ));
        }
        Ok((model, threshold))
    })())?;
    let test = tag(
        "load",
        load_sits_directory(&cfg.test_dir(), &cfg.band_spec(), Role::Test),
    )?;
    if let Some(shape) = test.shape() {
        if shape != model.baseline.bands.shape() {
            return Err(Error::Shape(format!(
                "monitored images are {shape:?}, the model's region is {:?}",
                model.baseline.bands.shape()
            ))
            .in_stage("monitor"));
        }
    }
    let scorer = cfg.ablation.scorer();
    let heat_dir = art.heatmaps();
    let mut results = Vec::with_capacity(test.len());
    for im in &test.images {
        let (score, heatmap) = tag("monitor", model.score(im, scorer, &cfg.ssim))?;
        let tau = threshold.tau(im.day_of_year as f64);
        let (residual, flag) = threshold.residual_and_flag(score, im.day_of_year as f64);
        log::info!(
            "{}  score {score:.5}  threshold {tau:.5}  {}",
            im.date,
            if flag { "HAZARD" } else { "ok" }
        );
        let stem = raster_name(im.date);
        tag("persist", write_heatmap_png(&heat_dir.join(stem.replace(".tif", ".png")), &heatmap))?;
        tag("persist", write_heatmap_raster(&heat_dir.join(&stem), &heatmap))?;
        results.push(AnomalyResult {
            date: im.date,
            day_of_year: im.day_of_year,
            score,
            threshold: tau,
            residual,
            flag,
            heatmap,
        });
    }
    let rows: Vec<ScoreRow> = results.iter().map(ScoreRow::from).collect();
    tag("persist", write_csv(&art.scores(), &rows))?;
    tag("persist", write_resolved(cfg, &art.root, "monitor"))?;
    Ok(results)
}

/// Joins the score stream with ground-truth labels and writes the report.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Report> {
    let art = cfg.artifacts();
    let rows: Vec<ScoreRow> = tag("evaluate", read_csv(&art.scores()))?;
    let labels = tag("evaluate", read_labels(&cfg.labels_path()))?;
    let mut by_date: BTreeMap<NaiveDate, bool> = BTreeMap::new();
    for l in &labels {
        by_date.insert(l.date, l.is_hazard);
    }
    let mut joined = Vec::with_capacity(rows.len());
    for r in &rows {
        let label = by_date.remove(&r.date).ok_or_else(|| {
            Error::InvalidArgument(format!("scored date {} has no label", r.date)).in_stage("evaluate")
        })?;
        joined.push(LabeledScore {
            date: r.date,
            residual: r.residual,
            flag: r.flag,
            label,
        });
    }
    if let Some(d) = by_date.keys().next() {
        return Err(Error::InvalidArgument(format!(
            "{} labelled dates were never scored, first {d}",
            by_date.len()
        ))
        .in_stage("evaluate"));
    }
    let param_count = tag("artifacts", Checkpoint::load(&art.checkpoint()))?
        .manifest
        .param_count;
    let report = tag(
        "evaluate",
        emit_report(&joined, &cfg.ablation.variant(), Some(param_count)),
    )?;
    tag("persist", (|| {
        atomic_write(&art.report_json(), report.to_json()?.as_bytes())?;
        atomic_write(&art.report_table(), report.table().as_bytes())?;
        if joined.iter().any(|j| j.label) {
            let residuals: Vec<f64> = joined.iter().map(|j| j.residual).collect();
            let labels: Vec<bool> = joined.iter().map(|j| j.label).collect();
            atomic_write(
                &art.pr_curve(),
                pr_curve_csv(&pr_curve(&residuals, &labels)?)?.as_bytes(),
            )?;
        }
        write_resolved(cfg, &art.root, "evaluate")
    })())?;
    Ok(report)
}

/// Generates the configured synthetic scene into the data directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SyntheticScene> {
    let scene = tag("synth", generate_scene(&cfg.synth))?;
    tag("persist", write_scene(&cfg.data_dir, &scene))?;
    tag("persist", write_resolved(cfg, &cfg.data_dir, "synth"))?;
    Ok(scene)
}
