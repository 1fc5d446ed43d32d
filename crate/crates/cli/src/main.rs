use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sitsmon::pipeline::{
    cmd_calibrate, cmd_evaluate, cmd_monitor, cmd_synth, cmd_train, RunConfig,
};

/// Seasonal change monitoring for satellite image time series.
///
/// Exit status: 0 when no hazard was flagged, 2 when `monitor` flagged at
/// least one image, 1 on any error.
#[derive(Parser)]
#[command(name = "sitsmon", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Run seed; for `synth` it seeds the scene instead.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Drop the patch-position encoding channels.
    #[arg(long, global = true)]
    no_position: bool,
    /// Replace the cyclical day-of-year encoding with a linear one.
    #[arg(long, global = true)]
    linear_time: bool,
    /// Score with mean absolute error instead of structural difference.
    #[arg(long, global = true)]
    mae_score: bool,
    /// Use one threshold for the whole year.
    #[arg(long, global = true)]
    flat_threshold: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Fit normalization, baseline and model on the training images.
    Train,
    /// Score training images and fit the decision threshold.
    Calibrate,
    /// Score new images, write heatmaps and the score stream.
    Monitor,
    /// Compare the score stream with labels and write the report.
    Evaluate,
    /// Write a synthetic scene to the data directory.
    Synth,
}

fn resolve(cli: &Cli) -> sitsmon::Result<RunConfig> {
    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        let key = if cli.command == Command::Synth {
            "synth.seed"
        } else {
            "seed"
        };
        sets.push(format!("{key}={seed}"));
    }
    for (on, key) in [
        (cli.no_position, "no_position"),
        (cli.linear_time, "linear_time"),
        (cli.mae_score, "mae_score"),
        (cli.flat_threshold, "flat_threshold"),
    ] {
        if on {
            sets.push(format!("ablation.{key}=true"));
        }
    }
    RunConfig::resolve(cli.config.as_deref(), &sets).map_err(|e| e.in_stage("config"))
}

fn run(cli: &Cli) -> sitsmon::Result<bool> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            let last = s.history.last().expect("at least one epoch");
            println!(
                "trained {} parameters for {} epochs: train L1 {:.5}, val L1 {:.5}",
                s.param_count,
                s.history.len(),
                last.train_loss,
                last.val_loss
            );
        }
        Command::Calibrate => {
            let t = cmd_calibrate(&cfg)?;
            println!("{}", t.to_json()?);
        }
        Command::Monitor => {
            let results = cmd_monitor(&cfg)?;
            let flagged = results.iter().filter(|r| r.flag).count();
            println!("{flagged} of {} images flagged", results.len());
            return Ok(flagged > 0);
        }
        Command::Evaluate => {
            print!("{}", cmd_evaluate(&cfg)?.table());
        }
        Command::Synth => {
            let s = cmd_synth(&cfg)?;
            println!(
                "wrote {} training and {} test images to {}",
                s.train.len(),
                s.test.len(),
                cfg.data_dir.display()
            );
        }
    }
    Ok(false)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            // Display already includes the stage tag and the underlying cause.
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
