//! Per-epoch metrics rows and the end-of-run summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{Mode, TrainConfig};

pub const METRICS_HEADER: &str = "epoch,student,train_loss,hard,teacher,peer,total,train_top1,val_top1,val_top5,mean_entropy,mean_weight,lr,wall_seconds";

/// One student's row for one epoch. Loss fields are sample-weighted means
/// over the epoch's training batches; `train_loss` equals `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub student: String,
    pub train_loss: f64,
    pub hard: f64,
    pub teacher: f64,
    pub peer: f64,
    pub total: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub mean_entropy: f64,
    pub mean_weight: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.student,
            self.train_loss,
            self.hard,
            self.teacher,
            self.peer,
            self.total,
            self.train_top1,
            self.val_top1,
            self.val_top5,
            self.mean_entropy,
            self.mean_weight,
            self.lr,
            self.wall_seconds
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 14 {
            return Err(Error::Data(format!("metrics row has {} fields, expected 14", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|e| Error::Data(format!("metrics field {i} '{}': {e}", f[i])))
        };
        Ok(Self {
            epoch: f[0]
                .parse()
                .map_err(|e| Error::Data(format!("metrics epoch '{}': {e}", f[0])))?,
            student: f[1].to_string(),
            train_loss: num(2)?,
            hard: num(3)?,
            teacher: num(4)?,
            peer: num(5)?,
            total: num(6)?,
            train_top1: num(7)?,
            val_top1: num(8)?,
            val_top5: num(9)?,
            mean_entropy: num(10)?,
            mean_weight: num(11)?,
            lr: num(12)?,
            wall_seconds: num(13)?,
        })
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Data(format!("{}: unexpected metrics header", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRecord::from_csv_row).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub params: usize,
    /// Teacher parameters divided by this model's, two decimals.
    pub compression_ratio: f64,
    pub final_val_top1: f64,
    pub final_val_top5: f64,
    pub best_val_top1: f64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_train_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    /// Mean teacher entropy (nats) over the last epoch's training samples.
    pub final_mean_entropy: f64,
    pub final_mean_weight: f64,
    /// Same statistics averaged over every epoch.
    pub run_mean_entropy: f64,
    pub run_mean_weight: f64,
    /// `ln C`.
    pub max_entropy: f64,
    /// `mean_entropy / ln C` over the run.
    pub normalized_uncertainty: f64,
}

/// Written as `summary.toml` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub teacher_params: usize,
    pub teacher_val_top1: f64,
    pub teacher_val_top5: f64,
    pub uncertainty: UncertaintySummary,
    pub students: Vec<ModelSummary>,
    pub config: TrainConfig,
}

impl RunSummary {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn student(&self, name: &str) -> Option<&ModelSummary> {
        self.students.iter().find(|s| s.name == name)
    }
}
