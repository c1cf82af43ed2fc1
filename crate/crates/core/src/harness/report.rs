//! Comparison tables and per-epoch series files built from run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::Mode;
use crate::harness::metrics::{read_metrics, MetricsRecord, RunSummary};
use crate::harness::train::files;
use crate::nets::compression_ratio;

pub const SERIES_HEADER: &str = "epoch,train_loss,train_top1,val_top1,val_top5,mean_entropy,mean_weight,lr";

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub records: Vec<MetricsRecord>,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let summary = RunSummary::read(&dir.join(files::SUMMARY))?;
        let records = read_metrics(&dir.join(files::METRICS))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            summary,
            records,
        })
    }

    pub fn label(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.summary.mode.short_name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub student: String,
    pub baseline_top1: f64,
    pub ours_top1: f64,
    pub baseline_top5: f64,
    pub ours_top5: f64,
}

impl DeltaRow {
    pub fn delta_top1(&self) -> f64 {
        self.ours_top1 - self.baseline_top1
    }

    pub fn delta_top5(&self) -> f64 {
        self.ours_top5 - self.baseline_top5
    }
}

/// Per-student final accuracy differences. Runs must share the dataset and
/// the student architectures.
pub fn delta_table(baseline: &RunSummary, ours: &RunSummary) -> Result<Vec<DeltaRow>> {
    if baseline.config.dataset != ours.config.dataset || baseline.config.seeds.data != ours.config.seeds.data {
        return Err(Error::Config("runs were trained on different datasets".into()));
    }
    ours.students
        .iter()
        .map(|o| {
            let b = baseline
                .student(&o.name)
                .ok_or_else(|| Error::Config(format!("baseline run has no {}", o.name)))?;
            if b.params != o.params {
                return Err(Error::Config(format!(
                    "{} has {} parameters in the baseline run and {} in the other",
                    o.name, b.params, o.params
                )));
            }
            Ok(DeltaRow {
                student: o.name.clone(),
                baseline_top1: b.final_val_top1,
                ours_top1: o.final_val_top1,
                baseline_top5: b.final_val_top5,
                ours_top5: o.final_val_top5,
            })
        })
        .collect()
}

pub fn format_delta_table(rows: &[DeltaRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "student", "base top1", "ours top1", "Δ top1", "base top5", "ours top5", "Δ top5"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>10.2} {:>10.2} {:>+10.2} {:>10.2} {:>10.2} {:>+10.2}",
            r.student,
            100.0 * r.baseline_top1,
            100.0 * r.ours_top1,
            100.0 * r.delta_top1(),
            100.0 * r.baseline_top5,
            100.0 * r.ours_top5,
            100.0 * r.delta_top5()
        );
    }
    out
}

fn human(count: f64) -> String {
    if count >= 1e6 {
        format!("{:.1}M", count / 1e6)
    } else if count >= 1e3 {
        format!("{:.1}K", count / 1e3)
    } else {
        format!("{count}")
    }
}

/// `name: teacher / student params = ratio×`, ratio rounded to 2 decimals.
pub fn compression_line(name: &str, teacher_params: f64, student_params: f64) -> Result<String> {
    let r = compression_ratio(teacher_params, student_params)?;
    Ok(format!(
        "{name}: {} / {} params = {r:.2}×",
        human(teacher_params),
        human(student_params)
    ))
}

/// One CSV per student with a row per epoch.
pub fn series_csv(records: &[MetricsRecord], student: &str) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for r in records.iter().filter(|r| r.student == student) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_top1, r.val_top1, r.val_top5, r.mean_entropy, r.mean_weight, r.lr
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    pub text: String,
    pub deltas: Vec<DeltaRow>,
    pub series_files: Vec<PathBuf>,
}

/// Explicit parameter counts for the compression lines, overriding the
/// counts recorded in the runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamOverride {
    pub teacher: f64,
    pub student1: f64,
    pub student2: f64,
}

/// Summarizes `run_dirs`, writing series files into `out_dir`. The delta
/// table compares the baseline-KD run against the dual run; both must be
/// among the inputs.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path, params: Option<ParamOverride>) -> Result<ReportOutput> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let runs = run_dirs
        .iter()
        .map(|d| LoadedRun::load(d).map_err(|e| Error::Config(format!("{}: {e}", d.display()))))
        .collect::<Result<Vec<_>>>()?;
    let find = |mode: Mode| runs.iter().find(|r| r.summary.mode == mode);
    let baseline = find(Mode::BaselineKd)
        .ok_or_else(|| Error::Config("no baseline_kd run among the inputs".into()))?;
    let ours = find(Mode::Dual).ok_or_else(|| Error::Config("no dual run among the inputs".into()))?;

    let mut text = String::new();
    let _ = writeln!(text, "runs:");
    for r in &runs {
        let accs: Vec<String> = r
            .summary
            .students
            .iter()
            .map(|s| format!("{} {:.2}%", s.name, 100.0 * s.final_val_top1))
            .collect();
        let _ = writeln!(text, "  {:<24} {:<15} {}", r.label(), r.summary.mode.to_string(), accs.join("  "));
    }
    let deltas = delta_table(&baseline.summary, &ours.summary)?;
    let _ = writeln!(text, "\nbaseline ({}) vs ours ({}):", baseline.label(), ours.label());
    text.push_str(&format_delta_table(&deltas));

    let _ = writeln!(text, "\ncompression:");
    let counts = params.unwrap_or_else(|| {
        let p = |name: &str| ours.summary.student(name).map_or(f64::NAN, |s| s.params as f64);
        ParamOverride {
            teacher: ours.summary.teacher_params as f64,
            student1: p("student1"),
            student2: p("student2"),
        }
    });
    for (name, n) in [("student1", counts.student1), ("student2", counts.student2)] {
        let _ = writeln!(text, "  {}", compression_line(name, counts.teacher, n)?);
    }

    let u = &ours.summary.uncertainty;
    let _ = writeln!(
        text,
        "\nteacher uncertainty ({}): mean entropy {:.4} nats of {:.4} max ({:.1}%), mean weight {:.4}",
        ours.label(),
        u.run_mean_entropy,
        u.max_entropy,
        100.0 * u.normalized_uncertainty,
        u.run_mean_weight
    );

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut series_files = Vec::new();
    for r in &runs {
        for s in &r.summary.students {
            let path = out_dir.join(format!("{}_{}_series.csv", r.label(), s.name));
            fs::write(&path, series_csv(&r.records, &s.name)).map_err(|e| Error::io(&path, e))?;
            series_files.push(path);
        }
    }
    let summary_path = out_dir.join("report.txt");
    fs::write(&summary_path, &text).map_err(|e| Error::io(&summary_path, e))?;

    Ok(ReportOutput {
        text,
        deltas,
        series_files,
    })
}
