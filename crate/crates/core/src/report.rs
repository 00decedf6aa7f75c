//! Run orchestration, reports and the run-directory layout.
//!
//! A run writes `<out>/<hash>-seed<seed>/` containing `config.json` (the
//! effective run config), `report.json`, `summary.txt` and
//! `checkpoint.bin`. Files are staged in a sibling `.partial` directory
//! that is renamed into place once everything is written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig, Task};
use crate::data::{collapse_labels_binary, generate_synthetic, load_dataset, planted_signal_accuracy, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Metrics, SeparationStats};
use crate::par::Execution;
use crate::train::{evaluate, fit, EpochRecord, Evaluation, Trainer};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub task: Task,
    pub train_subjects: usize,
    pub validation_subjects: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train: Metrics,
    pub validation: Metrics,
    pub validation_confusion: ConfusionMatrix,
    /// Per-epoch mean discriminator accuracy on training batches.
    pub discriminator_trace: Vec<f64>,
    /// Measured on the validation set with the best parameters.
    pub separation: SeparationStats,
    /// Generator self-test accuracy, for synthetic data.
    pub planted_signal_accuracy: Option<f64>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {}-seed{} ({:?})", self.config_hash, self.seed, self.task);
        let _ = writeln!(
            s,
            "subjects: {} train / {} validation; epochs run {}, best epoch {}",
            self.train_subjects, self.validation_subjects, self.epochs_run, self.best_epoch
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>9} {:>9}", "split", "Acc", "w-F1");
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>9.4}",
            "train", self.train.accuracy, self.train.weighted_f1
        );
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>9.4}",
            "validation", self.validation.accuracy, self.validation.weighted_f1
        );
        let _ = writeln!(s);
        let sep = &self.separation;
        let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>9}", "features", "between", "within", "ratio");
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>9.4} {:>9.4}",
            "public", sep.public_between, sep.public_within, sep.public_ratio
        );
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>9.4} {:>9.4}",
            "private", sep.private_between, sep.private_within, sep.private_ratio
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>8}",
            "epoch", "lr", "L_main", "L_dep", "L_disc", "L_hsic", "disc_acc", "val_acc", "val_f1", "pub_sep"
        );
        for h in &self.history {
            let l = &h.losses;
            let _ = writeln!(
                s,
                "{:>5} {:>10.3e} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.4} {:>7.4} {:>8.4}{}",
                h.epoch,
                h.lr_main,
                l.main,
                l.dep,
                l.disc,
                l.hsic,
                l.disc_accuracy,
                h.validation.accuracy,
                h.validation.weighted_f1,
                h.separation.public_ratio,
                if h.improved { " *" } else { "" }
            );
        }
        s
    }
}

/// Loads or generates the dataset a config names, collapsing labels for
/// binary runs.
pub fn load_data(config: &RunConfig, exec: Execution) -> Result<Dataset> {
    let dataset = match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        DataSource::Manifest(path) => load_dataset(path, exec)?,
    };
    if dataset.events != config.model.events {
        return Err(Error::Config(format!(
            "dataset has {} events, model expects {}",
            dataset.events, config.model.events
        )));
    }
    Ok(match config.task() {
        Task::Binary => collapse_labels_binary(dataset),
        Task::Ternary => dataset,
    })
}

/// Train/validation split of a run, seeded by the run seed.
pub fn split_data(config: &RunConfig, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
    dataset.split(config.validation_fraction, config.model.seed)
}

/// Trains and evaluates one run entirely in memory.
pub fn run_training(config: &RunConfig, exec: Execution) -> Result<(RunReport, Checkpoint)> {
    config.validate()?;
    let dataset = load_data(config, exec)?;
    let planted = match config.data {
        DataSource::Synthetic(_) => Some(planted_signal_accuracy(&dataset)?),
        DataSource::Manifest(_) => None,
    };
    let (train, val) = split_data(config, &dataset)?;
    let outcome = fit(&config.model, &train, &val, exec)?;
    let train_eval = evaluate(&outcome.trainer.model, &train, exec)?;
    let val_eval = evaluate(&outcome.trainer.model, &val, exec)?;
    let report = RunReport {
        seed: config.model.seed,
        config_hash: config.short_hash(),
        config: config.clone(),
        task: config.task(),
        train_subjects: train.samples.len(),
        validation_subjects: val.samples.len(),
        discriminator_trace: outcome.history.iter().map(|h| h.losses.disc_accuracy).collect(),
        epochs_run: outcome.history.len(),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        train: train_eval.metrics,
        validation: val_eval.metrics,
        validation_confusion: val_eval.confusion,
        separation: val_eval.separation,
        planted_signal_accuracy: planted,
    };
    Ok((report, outcome.checkpoint))
}

/// Re-evaluates a checkpoint on the validation split of its run config.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Checkpoint, exec: Execution) -> Result<Evaluation> {
    config.validate()?;
    let trainer = Trainer::from_checkpoint(&config.model, checkpoint)?;
    let dataset = load_data(config, exec)?;
    let (_, val) = split_data(config, &dataset)?;
    evaluate(&trainer.model, &val, exec)
}

pub fn run_dir(out: &Path, config: &RunConfig) -> PathBuf {
    out.join(format!("{}-seed{}", config.short_hash(), config.model.seed))
}

/// Writes all run artifacts, replacing an earlier run with the same name.
pub fn write_run(out: &Path, report: &RunReport, checkpoint: &Checkpoint) -> Result<PathBuf> {
    let dir = run_dir(out, &report.config);
    let staging = dir.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let put =
        |name: &str, bytes: &[u8]| fs::write(staging.join(name), bytes).map_err(|e| Error::io(staging.join(name), e));
    put(CONFIG_FILE, &serde_json::to_vec_pretty(&report.config)?)?;
    put(REPORT_FILE, &serde_json::to_vec_pretty(report)?)?;
    put(SUMMARY_FILE, report.summary().as_bytes())?;
    put(CHECKPOINT_FILE, &checkpoint.to_bytes())?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::rename(&staging, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
