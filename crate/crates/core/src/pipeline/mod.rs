//! End-to-end workflow: synth → train → calibrate → monitor → evaluate.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_calibrate, cmd_evaluate, cmd_monitor, cmd_synth, cmd_train, load_model, Calibration,
    LoadedModel, ScoreRow, TrainScoreRow, TrainSummary,
};
pub use config::{apply_override, Ablation, Artifacts, RunConfig};
