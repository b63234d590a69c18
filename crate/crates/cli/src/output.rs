//! File formats: epochs.csv rows, JSON summaries and checkpoints, all written
//! through a temp file and renamed into place.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ffattn_core::model::param_count;
use ffattn_core::trainer::{Checkpoint, EpochReport, RunResult, TrainConfig};
use serde::{Deserialize, Serialize};

pub const EPOCHS_HEADER: [&str; 9] = [
    "epoch",
    "task",
    "pooling",
    "length_spec",
    "lr",
    "seed",
    "train_loss",
    "test_accuracy",
    "wall_seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub task: String,
    pub pooling: String,
    pub length_spec: String,
    pub lr: f64,
    pub seed: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

impl EpochRow {
    pub fn new(config: &TrainConfig, report: &EpochReport) -> Self {
        EpochRow {
            epoch: report.epoch,
            task: config.task.to_string(),
            pooling: config.pooling.to_string(),
            length_spec: config.lengths.to_string(),
            lr: config.lr,
            seed: config.seed,
            train_loss: report.mean_train_loss,
            test_accuracy: report.test_accuracy,
            wall_seconds: report.wall_seconds,
        }
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    path.with_file_name(format!(".{name}.tmp"))
}

/// A file that becomes visible under its final name only on [`AtomicFile::commit`].
pub struct AtomicFile {
    target: PathBuf,
    temp: PathBuf,
    writer: BufWriter<File>,
}

impl AtomicFile {
    pub fn create(target: &Path) -> Result<Self> {
        if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let temp = temp_path(target);
        let file = File::create(&temp).with_context(|| format!("creating {}", temp.display()))?;
        Ok(AtomicFile {
            target: target.to_path_buf(),
            temp,
            writer: BufWriter::new(file),
        })
    }

    pub fn commit(mut self) -> Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_all()?;
        fs::rename(&self.temp, &self.target)
            .with_context(|| format!("renaming into {}", self.target.display()))
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = AtomicFile::create(path)?;
    file.write_all(bytes)?;
    file.commit()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// CSV writer with a fixed header; rows are flushed as they arrive so the
/// temp file can be tailed during long runs.
pub struct CsvSink {
    writer: csv::Writer<AtomicFile>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(AtomicFile::create(path)?);
        writer.write_record(header)?;
        writer.flush()?;
        Ok(CsvSink { writer })
    }

    pub fn epochs(path: &Path) -> Result<Self> {
        Self::create(path, &EPOCHS_HEADER)
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        let file = self
            .writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("flushing csv: {}", e.error()))?;
        file.commit()
    }
}

/// Everything about a run except the trained weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub param_count: usize,
    pub epochs_run: usize,
    pub solved: Option<usize>,
    pub final_accuracy: f64,
    pub reports: Vec<EpochReport>,
}

impl RunSummary {
    pub fn new(run: &RunResult) -> Self {
        RunSummary {
            config: run.config.clone(),
            param_count: param_count(&run.final_params),
            epochs_run: run.epochs_run(),
            solved: run.solved_at_epoch,
            final_accuracy: run.final_accuracy,
            reports: run.reports.clone(),
        }
    }
}

/// Writes result.json and checkpoint.json for a finished run into `dir`.
pub fn write_run_artifacts(dir: &Path, run: &RunResult) -> Result<()> {
    write_json(&dir.join("result.json"), &RunSummary::new(run))?;
    write_json(&dir.join("checkpoint.json"), &run.checkpoint())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}
