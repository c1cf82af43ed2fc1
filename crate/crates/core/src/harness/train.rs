//! Teacher pretraining and the student training protocols.
//!
//! A step runs the frozen teacher without graph linkage, derives the
//! per-sample confidence weights, records every student's forward pass in
//! one graph, and then runs one backward pass and one optimizer update per
//! student. Peer targets are detached, so each backward pass reaches only
//! its own student's parameters.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::data::{self, Augmenter, Batch, Dataset, Split};
use crate::distill::{self, LossBreakdown, UncertaintyStats};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::harness::checkpoint::save_checkpoint;
use crate::harness::config::{Mode, TrainConfig, Weighting};
use crate::harness::eval::{argmax, evaluate, Accuracy};
use crate::harness::metrics::{metrics_csv, MetricsRecord, ModelSummary, RunSummary, UncertaintySummary};
use crate::nets::{compression_ratio, LayerSpec, Network, ParamBinding};
use crate::optim::{CosineSchedule, Sgd};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudentId {
    Student1,
    Student2,
}

impl StudentId {
    pub const BOTH: [StudentId; 2] = [StudentId::Student1, StudentId::Student2];

    pub fn name(self) -> &'static str {
        match self {
            StudentId::Student1 => "student1",
            StudentId::Student2 => "student2",
        }
    }

    pub fn spec(self, cfg: &TrainConfig) -> Vec<LayerSpec> {
        match self {
            StudentId::Student1 => cfg.student1_spec(),
            StudentId::Student2 => cfg.student2_spec(),
        }
    }

    pub fn seed(self, cfg: &TrainConfig) -> u64 {
        match self {
            StudentId::Student1 => cfg.seeds.student1,
            StudentId::Student2 => cfg.seeds.student2,
        }
    }
}

/// A student network together with its own optimizer state.
#[derive(Debug, Clone)]
pub struct Student {
    pub name: String,
    pub net: Network,
    pub opt: Sgd,
}

impl Student {
    pub fn init(id: StudentId, cfg: &TrainConfig) -> Result<Self> {
        let net = Network::build(&id.spec(cfg), id.seed(cfg))?;
        let opt = Sgd::new(net.params(), cfg.eta0, cfg.momentum, cfg.weight_decay)?;
        Ok(Self {
            name: id.name().to_string(),
            net,
            opt,
        })
    }
}

/// Loss settings for one step.
#[derive(Debug, Clone, Copy)]
pub struct StepSettings {
    pub weights: distill::LossWeights,
    pub tau: f64,
    pub direction: distill::KlDirection,
    pub weighting: Weighting,
    /// Add the peer term (requires exactly two students).
    pub peer: bool,
    pub lr: f64,
}

impl StepSettings {
    pub fn from_config(cfg: &TrainConfig, weighting: Weighting, lr: f64) -> Self {
        Self {
            weights: cfg.loss_weights(),
            tau: cfg.tau,
            direction: cfg.kl_direction,
            weighting,
            peer: cfg.mode.uses_peer(),
            lr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub breakdowns: Vec<LossBreakdown>,
    pub stats: UncertaintyStats,
    /// Correctly classified training samples, per student.
    pub correct: Vec<usize>,
}

fn abort<'a>(student: &'a str, term: &'static str) -> impl Fn(Error) -> Error + 'a {
    move |e| match e {
        Error::NonFinite { .. } => Error::NumericAbort {
            student: student.to_string(),
            term,
            epoch: 0,
            batch: 0,
        },
        other => other,
    }
}

/// Per-student handles recorded during the shared forward pass.
struct Recorded {
    logits: Var,
    binding: ParamBinding,
}

/// One synchronized update of every student in `students`.
pub fn train_step(
    teacher: &Network,
    students: &mut [&mut Student],
    x: &Tensor,
    labels: &[usize],
    settings: &StepSettings,
) -> Result<StepReport> {
    if !teacher.is_frozen() {
        return Err(Error::Contract("teacher must be frozen before distillation".into()));
    }
    if labels.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if settings.peer && students.len() != 2 {
        return Err(Error::Contract("peer distillation needs exactly two students".into()));
    }

    let teacher_logits = teacher.predict(x).map_err(abort("teacher", "teacher_forward"))?;
    let stats = UncertaintyStats::from_logits(&teacher_logits)?;
    let weights = match settings.weighting {
        Weighting::Entropy => stats.weight.clone(),
        Weighting::Unit => vec![1.0; labels.len()],
    };

    let mut g = Graph::new();
    let xv = g.constant(x)?;
    let mut rec = Vec::with_capacity(students.len());
    for s in students.iter() {
        let (logits, binding) = s.net.forward(&mut g, xv).map_err(abort(&s.name, "forward"))?;
        rec.push(Recorded { logits, binding });
    }

    let mut totals = Vec::with_capacity(students.len());
    let mut breakdowns = Vec::with_capacity(students.len());
    let mut correct = Vec::with_capacity(students.len());
    for (i, s) in students.iter().enumerate() {
        let name = s.name.as_str();
        let logits = rec[i].logits;
        let hard = distill::hard_loss(&mut g, logits, labels).map_err(abort(name, "hard"))?;
        let teacher_term = distill::teacher_loss(
            &mut g,
            logits,
            &teacher_logits,
            &weights,
            settings.tau,
            settings.direction,
        )
        .map_err(abort(name, "teacher"))?;
        let peer = if settings.peer {
            let other = rec[1 - i].logits;
            Some(
                distill::peer_loss(&mut g, logits, other, settings.tau, settings.direction)
                    .map_err(abort(name, "peer"))?,
            )
        } else {
            None
        };
        let (total, breakdown) =
            distill::total_loss(&mut g, hard, Some(teacher_term), peer, settings.weights, settings.tau)
                .map_err(abort(name, "total"))?;
        totals.push(total);
        breakdowns.push(breakdown);

        let lv = g.value(logits);
        correct.push(
            labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(lv.row(r)) == y)
                .count(),
        );
    }

    // Independent backward passes, then independent updates.
    for ((s, r), &total) in students.iter_mut().zip(&rec).zip(&totals) {
        let grads = g.backward(total)?;
        s.net.zero_grad();
        s.net.accumulate_grads(&grads, &r.binding)?;
        if !s.net.params().all(|p| p.grad().is_some_and(|gr| gr.iter().all(|v| v.is_finite()))) {
            return Err(Error::NumericAbort {
                student: s.name.clone(),
                term: "gradient",
                epoch: 0,
                batch: 0,
            });
        }
    }
    for s in students.iter_mut() {
        s.opt.lr = settings.lr;
        s.opt.step(s.net.params_mut())?;
        if !s.net.params().all(|p| p.all_finite()) {
            return Err(Error::NumericAbort {
                student: s.name.clone(),
                term: "update",
                epoch: 0,
                batch: 0,
            });
        }
    }

    Ok(StepReport {
        breakdowns,
        stats,
        correct,
    })
}

/// The dual-student step: both students, peer term on, entropy weighting.
pub fn train_step_dual(
    teacher: &Network,
    s1: &mut Student,
    s2: &mut Student,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(LossBreakdown, LossBreakdown, UncertaintyStats)> {
    let mut settings = StepSettings::from_config(cfg, Weighting::Entropy, lr);
    settings.peer = true;
    let report = train_step(teacher, &mut [s1, s2], &batch.features, &batch.labels, &settings)?;
    let [b1, b2]: [LossBreakdown; 2] = report
        .breakdowns
        .try_into()
        .expect("two students produce two breakdowns");
    Ok((b1, b2, report.stats))
}

/// Outcome of training one or two students against a teacher.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub students: Vec<Student>,
    /// Best-validation snapshot of each student: (network, epoch, val top-1).
    pub best: Vec<(Network, usize, f64)>,
    /// Every batch's loss breakdown, in training order.
    pub batch_log: Vec<LossBreakdown>,
    /// Number of batches passed through the augmenter.
    pub augment_calls: usize,
    pub wall_seconds: f64,
}

impl RunOutput {
    pub fn final_record(&self, student: &str) -> Option<&MetricsRecord> {
        self.records.iter().rev().find(|r| r.student == student)
    }
}

fn stamp(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NumericAbort { student, term, .. } => Error::NumericAbort {
            student,
            term,
            epoch,
            batch,
        },
        other => other,
    }
}

/// Trains the students in `which` for `cfg.epochs` epochs. Students listed
/// together take synchronized steps on identical batches; with
/// `cfg.mode == Dual` and two students they also distill from each other.
pub fn run_students(
    cfg: &TrainConfig,
    ds: &Dataset,
    teacher: &Network,
    which: &[StudentId],
    weighting: Weighting,
) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let schedule = CosineSchedule::new(cfg.eta0, cfg.epochs)?;
    let mut students = which
        .iter()
        .map(|&id| Student::init(id, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Vec<Option<(Network, usize, f64)>> = vec![None; students.len()];
    let mut augmenter = Augmenter::new(cfg.augment)?;
    let mut records = Vec::with_capacity(cfg.epochs * students.len());
    let mut batch_log = Vec::new();
    let peer = cfg.mode.uses_peer() && students.len() == 2;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch)?;
        let mut settings = StepSettings::from_config(cfg, weighting, lr);
        settings.peer = peer;
        let mut aug_rng = rng::stream(cfg.seeds.shuffle, rng::AUGMENT, epoch as u64);

        let k = students.len();
        let mut sums = vec![[0.0f64; 4]; k];
        let mut correct = vec![0usize; k];
        let (mut seen, mut entropy_sum, mut weight_sum) = (0usize, 0.0, 0.0);

        for (b, batch) in data::batches(ds, Split::Train, cfg.batch_size, cfg.seeds.shuffle, epoch)?
            .into_iter()
            .enumerate()
        {
            let mut x = batch.features;
            augmenter.apply(&mut x, &mut aug_rng);
            let mut refs: Vec<&mut Student> = students.iter_mut().collect();
            let report = train_step(teacher, &mut refs, &x, &batch.labels, &settings).map_err(|e| stamp(e, epoch, b))?;

            let n = batch.labels.len();
            seen += n;
            entropy_sum += report.stats.entropy.iter().sum::<f64>();
            weight_sum += report.stats.weight.iter().sum::<f64>();
            for (i, bd) in report.breakdowns.iter().enumerate() {
                let w = n as f64;
                sums[i][0] += w * bd.hard;
                sums[i][1] += w * bd.teacher;
                sums[i][2] += w * bd.peer;
                sums[i][3] += w * bd.total;
                correct[i] += report.correct[i];
            }
            batch_log.extend(report.breakdowns);
        }

        let n = seen as f64;
        let wall = if cfg.log_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        for (i, s) in students.iter().enumerate() {
            let acc = evaluate(&s.net, ds, Split::Val)?;
            let slot = &mut best[i];
            if slot.as_ref().is_none_or(|b| acc.top1 > b.2) {
                *slot = Some((s.net.clone(), epoch, acc.top1));
            }
            records.push(MetricsRecord {
                epoch,
                student: s.name.clone(),
                train_loss: sums[i][3] / n,
                hard: sums[i][0] / n,
                teacher: sums[i][1] / n,
                peer: sums[i][2] / n,
                total: sums[i][3] / n,
                train_top1: correct[i] as f64 / n,
                val_top1: acc.top1,
                val_top5: acc.top5,
                mean_entropy: entropy_sum / n,
                mean_weight: weight_sum / n,
                lr,
                wall_seconds: wall,
            });
        }
    }

    Ok(RunOutput {
        records,
        students,
        best: best.into_iter().map(|b| b.expect("at least one epoch")).collect(),
        batch_log,
        augment_calls: augmenter.calls(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains the teacher with the hard loss only, then freezes it. Returns the
/// frozen network and its validation accuracy.
pub fn pretrain_teacher(cfg: &TrainConfig, ds: &Dataset) -> Result<(Network, Accuracy)> {
    cfg.validate()?;
    let mut net = Network::build(&cfg.teacher_spec(), cfg.seeds.teacher)?;
    let mut opt = Sgd::new(net.params(), cfg.eta0, cfg.momentum, cfg.weight_decay)?;
    let schedule = CosineSchedule::new(cfg.eta0, cfg.teacher_epochs)?;
    let mut augmenter = Augmenter::new(cfg.augment)?;

    for epoch in 0..cfg.teacher_epochs {
        opt.lr = schedule.lr_at(epoch)?;
        let mut aug_rng = rng::stream(cfg.seeds.shuffle, rng::TEACHER_AUGMENT, epoch as u64);
        let batches = data::batches_in_stream(
            ds,
            Split::Train,
            cfg.batch_size,
            cfg.seeds.shuffle,
            rng::TEACHER_SHUFFLE,
            epoch,
        )?;
        for (b, batch) in batches.into_iter().enumerate() {
            let mut x = batch.features;
            augmenter.apply(&mut x, &mut aug_rng);
            let mut g = Graph::new();
            let xv = g.constant(&x)?;
            let (logits, binding) = net
                .forward(&mut g, xv)
                .map_err(abort("teacher", "forward"))
                .map_err(|e| stamp(e, epoch, b))?;
            let loss = distill::hard_loss(&mut g, logits, &batch.labels)
                .map_err(abort("teacher", "hard"))
                .map_err(|e| stamp(e, epoch, b))?;
            let grads = g.backward(loss)?;
            net.zero_grad();
            net.accumulate_grads(&grads, &binding)?;
            opt.step(net.params_mut())?;
            if !net.params().all(|p| p.all_finite()) {
                return Err(Error::NumericAbort {
                    student: "teacher".into(),
                    term: "update",
                    epoch,
                    batch: b,
                });
            }
        }
    }
    net.freeze();
    let acc = evaluate(&net, ds, Split::Val)?;
    Ok((net, acc))
}

/// Aggregates a finished run into its summary record.
pub fn summarize(cfg: &TrainConfig, teacher: &Network, teacher_acc: Accuracy, out: &RunOutput) -> Result<RunSummary> {
    let teacher_params = teacher.param_count();
    let students = out
        .students
        .iter()
        .zip(&out.best)
        .map(|(s, (_, best_epoch, best_top1))| {
            let last = out
                .final_record(&s.name)
                .ok_or_else(|| Error::Data(format!("no metrics for {}", s.name)))?;
            Ok(ModelSummary {
                name: s.name.clone(),
                params: s.net.param_count(),
                compression_ratio: compression_ratio(teacher_params as f64, s.net.param_count() as f64)?,
                final_val_top1: last.val_top1,
                final_val_top5: last.val_top5,
                best_val_top1: *best_top1,
                best_epoch: *best_epoch,
                final_train_loss: last.train_loss,
                final_train_top1: last.train_top1,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = out.students.first().map(|s| s.name.as_str()).unwrap_or("");
    let per_epoch: Vec<&MetricsRecord> = out.records.iter().filter(|r| r.student == first).collect();
    let max_entropy = (cfg.dataset.num_classes as f64).ln();
    let epochs = per_epoch.len().max(1) as f64;
    let run_mean_entropy = per_epoch.iter().map(|r| r.mean_entropy).sum::<f64>() / epochs;
    let run_mean_weight = per_epoch.iter().map(|r| r.mean_weight).sum::<f64>() / epochs;
    let last = per_epoch.last();

    Ok(RunSummary {
        mode: cfg.mode,
        epochs: cfg.epochs,
        wall_seconds: out.wall_seconds,
        teacher_params,
        teacher_val_top1: teacher_acc.top1,
        teacher_val_top5: teacher_acc.top5,
        uncertainty: UncertaintySummary {
            final_mean_entropy: last.map_or(0.0, |r| r.mean_entropy),
            final_mean_weight: last.map_or(0.0, |r| r.mean_weight),
            run_mean_entropy,
            run_mean_weight,
            max_entropy,
            normalized_uncertainty: run_mean_entropy / max_entropy,
        },
        students,
        config: cfg.clone(),
    })
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const METRICS: &str = "metrics.csv";
    pub const SUMMARY: &str = "summary.toml";
    pub const TEACHER: &str = "teacher.ukdc";

    pub fn best(student: &str) -> String {
        format!("{student}_best.ukdc")
    }

    pub fn last(student: &str) -> String {
        format!("{student}_final.ukdc")
    }
}

/// Writes config echo, metrics, checkpoints, and summary into `dir`.
pub fn write_run_dir(dir: &Path, cfg: &TrainConfig, teacher: &Network, out: &RunOutput, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write(files::CONFIG, cfg.to_toml()?)?;
    write(files::METRICS, metrics_csv(&out.records))?;
    save_checkpoint(teacher, &dir.join(files::TEACHER))?;
    for (s, (best, _, _)) in out.students.iter().zip(&out.best) {
        save_checkpoint(best, &dir.join(files::best(&s.name)))?;
        save_checkpoint(&s.net, &dir.join(files::last(&s.name)))?;
    }
    write(files::SUMMARY, summary.to_toml()?)
}

/// Everything a finished run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub output: RunOutput,
    pub teacher: Network,
}

/// Trains both students under `cfg` against an already frozen teacher,
/// optionally writing a run directory.
pub fn train_with_teacher(
    cfg: &TrainConfig,
    ds: &Dataset,
    teacher: &Network,
    teacher_acc: Accuracy,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let output = run_students(cfg, ds, teacher, &StudentId::BOTH, cfg.mode.weighting())?;
    let summary = summarize(cfg, teacher, teacher_acc, &output)?;
    if let Some(dir) = out_dir {
        write_run_dir(dir, cfg, teacher, &output, &summary)?;
    }
    Ok(RunResult {
        summary,
        output,
        teacher: teacher.clone(),
    })
}

/// Full protocol: generate data, pretrain and freeze the teacher, train both
/// students in `cfg.mode`.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let ds = data::generate(&cfg.dataset_spec())?;
    let (teacher, acc) = pretrain_teacher(cfg, &ds)?;
    train_with_teacher(cfg, &ds, &teacher, acc, out_dir)
}

/// Loads a frozen teacher from disk, checking it matches the dataset.
pub fn load_teacher(path: &Path, ds: &Dataset) -> Result<(Network, Accuracy)> {
    let mut net = crate::harness::checkpoint::load_checkpoint(path)?;
    if net.input_dim() != ds.feature_dim() || net.num_classes() != ds.num_classes() {
        return Err(Error::Config(format!(
            "teacher {} expects {}→{} but the dataset has {} features and {} classes",
            path.display(),
            net.input_dim(),
            net.num_classes(),
            ds.feature_dim(),
            ds.num_classes()
        )));
    }
    net.freeze();
    let acc = evaluate(&net, ds, Split::Val)?;
    Ok((net, acc))
}

/// Modes whose students learn only from labels still report teacher
/// statistics; this names the mode for log lines.
pub fn describe(mode: Mode) -> &'static str {
    match mode {
        Mode::HardOnly => "hard labels only",
        Mode::BaselineKd => "hard labels + unweighted soft targets",
        Mode::UncertaintyKd => "hard labels + confidence-weighted soft targets",
        Mode::Dual => "confidence-weighted soft targets + peer distillation",
    }
}
