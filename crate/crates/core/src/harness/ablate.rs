//! The four-row loss-component ladder: hard labels only, plus unweighted
//! teacher targets, plus confidence weighting, plus peer distillation.
//!
//! Each seed block gets its own dataset and teacher; the teacher is trained
//! once per block and shared by all four rows, so rows differ only in the
//! student objective.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data;
use crate::error::{Error, Result};
use crate::harness::config::{Mode, SeedBlock, TrainConfig};
use crate::harness::eval::Accuracy;
use crate::harness::metrics::RunSummary;
use crate::harness::train::{pretrain_teacher, train_with_teacher, StudentId};
use crate::nets::Network;

pub const ABLATION_HEADER: &str = "configuration,student,mean_val_top1,std_val_top1,n_seeds,mean_best_val_top1,per_seed_val_top1";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    pub student: String,
    /// Final val top-1 per seed block, in seed order.
    pub values: Vec<f64>,
    pub best_values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl AblationRow {
    fn new(mode: Mode, student: &str, values: Vec<f64>, best_values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            mode,
            student: student.to_string(),
            values,
            best_values,
            mean,
            std,
        }
    }

    pub fn mean_best(&self) -> f64 {
        mean_std(&self.best_values).0
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seed_blocks: Vec<u64>,
    /// Four ladder rows times two students, ladder order then student order.
    pub rows: Vec<AblationRow>,
    /// Every underlying run, as (seed block, summary).
    pub runs: Vec<(u64, RunSummary)>,
}

impl AblationReport {
    pub fn row(&self, mode: Mode, student: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode && r.student == student)
    }

    /// `mean(a) - mean(b)` for one student.
    pub fn delta(&self, a: Mode, b: Mode, student: &str) -> Option<f64> {
        Some(self.row(a, student)?.mean - self.row(b, student)?.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_HEADER);
        out.push('\n');
        for r in &self.rows {
            let per_seed: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.mode.ladder_label(),
                r.student,
                r.mean,
                r.std,
                r.values.len(),
                r.mean_best(),
                per_seed.join(";")
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>22} {:>22}", "configuration", "student1 top-1", "student2 top-1");
        for mode in Mode::ALL {
            let cell = |s: StudentId| {
                self.row(mode, s.name())
                    .map(|r| format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std))
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{:<18} {:>22} {:>22}",
                mode.ladder_label(),
                cell(StudentId::Student1),
                cell(StudentId::Student2)
            );
        }
        let _ = writeln!(out, "seeds: {:?}", self.seed_blocks);
        out
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs the ladder for every seed block. `base` supplies everything except
/// the mode, the loss weights, and the seeds. When `out_dir` is given, each
/// run is written to `out_dir/seed<block>/<mode>`. At most `jobs` runs
/// execute at once; results do not depend on `jobs`.
pub fn ablate(base: &TrainConfig, seed_blocks: &[u64], jobs: usize, out_dir: Option<&Path>) -> Result<AblationReport> {
    if seed_blocks.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let configs: Vec<TrainConfig> = seed_blocks
        .iter()
        .map(|&b| {
            let mut cfg = base.clone();
            cfg.seeds = SeedBlock::from_block(b);
            cfg
        })
        .collect();
    for cfg in &configs {
        cfg.clone().with_mode(Mode::Dual).validate()?;
    }

    let pool = pool(jobs)?;
    type Prepared = (data::Dataset, Network, Accuracy);
    let prepared: Vec<Prepared> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let ds = data::generate(&cfg.dataset_spec())?;
                let (teacher, acc) = pretrain_teacher(cfg, &ds)?;
                Ok((ds, teacher, acc))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let tasks: Vec<(usize, Mode)> = (0..configs.len())
        .flat_map(|i| Mode::ALL.into_iter().map(move |m| (i, m)))
        .collect();
    let summaries: Vec<RunSummary> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, mode)| {
                let cfg = configs[i].clone().with_mode(mode);
                let (ds, teacher, acc) = &prepared[i];
                let dir = out_dir.map(|d| d.join(format!("seed{}", seed_blocks[i])).join(mode.short_name()));
                Ok(train_with_teacher(&cfg, ds, teacher, *acc, dir.as_deref())?.summary)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(8);
    for mode in Mode::ALL {
        for id in StudentId::BOTH {
            let picked: Vec<_> = tasks
                .iter()
                .zip(&summaries)
                .filter(|((_, m), _)| *m == mode)
                .map(|(_, s)| {
                    s.student(id.name())
                        .map(|m| (m.final_val_top1, m.best_val_top1))
                        .ok_or_else(|| Error::Data(format!("run is missing {}", id.name())))
                })
                .collect::<Result<Vec<_>>>()?;
            let (values, best) = picked.into_iter().unzip();
            rows.push(AblationRow::new(mode, id.name(), values, best));
        }
    }

    let runs = tasks.iter().map(|&(i, _)| seed_blocks[i]).zip(summaries).collect();
    Ok(AblationReport {
        seed_blocks: seed_blocks.to_vec(),
        rows,
        runs,
    })
}
