//! `ukd`: dataset generation, teacher pretraining, distillation runs, the
//! ablation ladder, evaluation, and reports.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then
//! command-line flags (flags win). Exit codes: 0 success, 1 runtime
//! failure, 2 usage or configuration error, 3 numeric abort.

mod runfile;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ukd_core::data::{self, Dataset, DatasetSpec, Split};
use ukd_core::distill::KlDirection;
use ukd_core::harness::report::{report, ParamOverride};
use ukd_core::harness::train::{load_teacher, pretrain_teacher, train_with_teacher};
use ukd_core::harness::{ablate, evaluate, load_checkpoint, save_checkpoint, Mode, SeedBlock, TrainConfig};

use runfile::RunFile;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "ukd", version, about = "Uncertainty-weighted dual-student distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture dataset file.
    GenData(GenDataArgs),
    /// Train the teacher with the hard loss and save it.
    PretrainTeacher(PretrainArgs),
    /// Train both students in one mode and write a run directory.
    Train(TrainArgs),
    /// Run the four-row loss ablation over several seed blocks.
    Ablate(AblateArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Compare run directories and write per-epoch series files.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Per-class Gaussian standard deviation around unit-sphere means.
    #[arg(long, default_value_t = 0.6)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction of each class held out for validation when the file is
    /// loaded.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Also write the raw features as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output `.ukdd` file.
    #[arg(short, long)]
    output: PathBuf,
}

/// Training settings shared by `pretrain-teacher`, `train`, and `ablate`.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed block k: data seed k, teacher 1e6+k, students 2e6+k and 3e6+k,
    /// shuffle 4e6+k [default: 1]
    #[arg(long)]
    seed_block: Option<u64>,
    /// Hard-label weight α [default: mode's]
    #[arg(long)]
    alpha: Option<f64>,
    /// Teacher-distillation weight β [default: mode's]
    #[arg(long)]
    beta: Option<f64>,
    /// Peer-distillation weight γ [default: mode's]
    #[arg(long)]
    gamma: Option<f64>,
    /// Distillation temperature τ [default: 4.0]
    #[arg(long)]
    tau: Option<f64>,
    /// Student training epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Teacher pretraining epochs [default: 3]
    #[arg(long)]
    teacher_epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate η₀ of the cosine schedule [default: 0.1]
    #[arg(long)]
    eta0: Option<f64>,
    /// SGD momentum μ [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// L2 weight decay λ [default: 1e-4]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// KL argument order [default: student-first]
    #[arg(long, value_enum)]
    kl_direction: Option<KlArg>,
    /// Gaussian feature-noise strength for training batches [default: 0.05]
    #[arg(long)]
    augment_noise: Option<f64>,
    /// Record elapsed seconds in metrics.csv (makes it non-reproducible).
    #[arg(long)]
    log_wall_time: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KlArg {
    StudentFirst,
    TargetFirst,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Train on this `.ukdd` file instead of generating data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output `.ukdc` checkpoint.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// hard | kd | ukd | dual [default: dual]
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Train on this `.ukdd` file instead of generating data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use this frozen teacher checkpoint instead of pretraining one.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Run directory [default: $UKD_RUN_ROOT/<mode>-block<k>]
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "UKD_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Number of seed blocks, starting at --first-block.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    first_block: u64,
    /// Maximum concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Skip writing the per-run directories.
    #[arg(long)]
    no_run_dirs: bool,
    /// Output directory [default: $UKD_RUN_ROOT/ablation]
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, env = "UKD_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `.ukdc` checkpoint to score.
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.ukdd` dataset; without it the dataset is generated from the
    /// config and seed block.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    split: SplitArg,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories; must include a kd and a dual run.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for report.txt and the series CSVs.
    #[arg(short, long)]
    output: PathBuf,
    /// Parameter counts TEACHER,STUDENT1,STUDENT2 for the compression lines
    /// (e.g. 25.6e6,11.7e6,3.5e6) [default: counts recorded in the runs]
    #[arg(long, value_parser = parse_params)]
    params: Option<ParamOverride>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn parse_params(s: &str) -> std::result::Result<ParamOverride, String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match v[..] {
        [teacher, student1, student2] => Ok(ParamOverride {
            teacher,
            student1,
            student2,
        }),
        _ => Err(format!("expected three comma-separated counts, got {}", v.len())),
    }
}

/// Marks errors that should exit with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ukd_core::Error>() {
            return match e {
                ukd_core::Error::NumericAbort { .. } => EXIT_NUMERIC,
                ukd_core::Error::Config(_) | ukd_core::Error::Spec(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

impl TrainFlags {
    /// Defaults, then the config file, then flags. `mode`, when given,
    /// replaces the file's mode and resets the loss weights to its defaults
    /// before explicit weight flags apply.
    fn resolve(&self, mode: Option<Mode>) -> Result<(TrainConfig, Option<PathBuf>)> {
        let (mut cfg, out_dir) = match &self.config {
            Some(path) => {
                let rf = RunFile::read(path)?;
                (rf.config, rf.out_dir)
            }
            None => (TrainConfig::default(), None),
        };
        if let Some(m) = mode {
            cfg = cfg.with_mode(m);
        }
        if let Some(b) = self.seed_block {
            cfg.seeds = SeedBlock::from_block(b);
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.beta, self.beta);
        set(&mut cfg.gamma, self.gamma);
        set(&mut cfg.tau, self.tau);
        set(&mut cfg.eta0, self.eta0);
        set(&mut cfg.momentum, self.momentum);
        set(&mut cfg.weight_decay, self.weight_decay);
        set(&mut cfg.augment.noise, self.augment_noise);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.teacher_epochs = self.teacher_epochs.unwrap_or(cfg.teacher_epochs);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        if let Some(k) = self.kl_direction {
            cfg.kl_direction = match k {
                KlArg::StudentFirst => KlDirection::StudentFirst,
                KlArg::TargetFirst => KlDirection::TargetFirst,
            };
        }
        cfg.log_wall_time |= self.log_wall_time;
        cfg.validate()?;
        Ok((cfg, out_dir))
    }
}

/// Loads `path` if given, adopting its class count and feature dimension;
/// otherwise generates the dataset described by `cfg`.
fn dataset_for(cfg: &mut TrainConfig, path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => {
            let ds = Dataset::load(p, cfg.dataset.val_fraction)?;
            cfg.dataset.num_classes = ds.num_classes();
            cfg.dataset.feature_dim = ds.feature_dim();
            cfg.dataset.samples_per_class = ds.len() / ds.num_classes();
            cfg.validate()?;
            Ok(ds)
        }
        None => Ok(data::generate(&cfg.dataset_spec())?),
    }
}

/// Refuses to reuse a default output directory that already holds a run.
fn fresh_default_dir(dir: &Path) -> Result<()> {
    if dir.join("summary.toml").exists() || dir.join("ablation.csv").exists() {
        bail!(usage(format!(
            "{} already holds results; pass -o to overwrite it explicitly",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let spec = DatasetSpec {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        feature_dim: a.dim,
        overlap_sigma: a.sigma,
        seed: a.seed,
        val_fraction: a.val_fraction,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ds = data::generate(&spec)?;
    ds.save(&a.output)?;
    if let Some(csv) = &a.csv {
        ds.write_csv(csv)?;
    }
    let bayes = data::bayes_accuracy(&spec, 20_000)?;
    println!("wrote {}", a.output.display());
    println!("N = {}, C = {}, dim = {}", ds.len(), ds.num_classes(), ds.feature_dim());
    println!("nearest-true-mean accuracy (Bayes estimate, 20000 draws): {bayes:.4}");
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let (mut cfg, _) = a.flags.resolve(None)?;
    let ds = dataset_for(&mut cfg, a.data.as_deref())?;
    let (teacher, acc) = pretrain_teacher(&cfg, &ds)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_checkpoint(&teacher, &a.output)?;
    println!(
        "teacher: {} params, val top-1 {:.4}, top-5 {:.4} -> {}",
        teacher.param_count(),
        acc.top1,
        acc.top5,
        a.output.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (mut cfg, file_out) = a.flags.resolve(a.mode)?;
    let ds = dataset_for(&mut cfg, a.data.as_deref())?;
    let dir = match a.output.or(file_out) {
        Some(d) => d,
        None => {
            let block = cfg.seeds.data;
            let d = a.run_root.join(format!("{}-block{block}", cfg.mode));
            fresh_default_dir(&d)?;
            d
        }
    };
    let (teacher, acc) = match &a.teacher {
        Some(p) => load_teacher(p, &ds)?,
        None => pretrain_teacher(&cfg, &ds)?,
    };
    let result = train_with_teacher(&cfg, &ds, &teacher, acc, Some(&dir))?;
    let s = &result.summary;
    println!("mode {} ({} epochs) -> {}", s.mode, s.epochs, dir.display());
    println!("teacher: {} params, val top-1 {:.4}", s.teacher_params, s.teacher_val_top1);
    for m in &s.students {
        println!(
            "{}: {} params ({:.2}× smaller), val top-1 {:.4}, top-5 {:.4}, best {:.4} @ epoch {}",
            m.name, m.params, m.compression_ratio, m.final_val_top1, m.final_val_top5, m.best_val_top1, m.best_epoch
        );
    }
    println!(
        "teacher entropy {:.4} nats (max {:.4}), mean weight {:.4}",
        s.uncertainty.run_mean_entropy, s.uncertainty.max_entropy, s.uncertainty.run_mean_weight
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!(usage("--seeds must be at least 1"));
    }
    let (cfg, file_out) = a.flags.resolve(None)?;
    let dir = match a.output.or(file_out) {
        Some(d) => d,
        None => {
            let d = a.run_root.join("ablation");
            fresh_default_dir(&d)?;
            d
        }
    };
    let blocks: Vec<u64> = (a.first_block..a.first_block + a.seeds).collect();
    let run_dirs = (!a.no_run_dirs).then_some(dir.as_path());
    let report = ablate(&cfg, &blocks, a.jobs, run_dirs)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let table = report.table();
    fs::write(dir.join("ablation.csv"), report.to_csv()).context("writing ablation.csv")?;
    fs::write(dir.join("ablation.txt"), &table).context("writing ablation.txt")?;
    print!("{table}");
    println!("-> {}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (mut cfg, _) = a.flags.resolve(None)?;
    let ds = dataset_for(&mut cfg, a.data.as_deref())?;
    let net = load_checkpoint(&a.checkpoint)?;
    if net.input_dim() != ds.feature_dim() || net.num_classes() != ds.num_classes() {
        bail!(usage(format!(
            "checkpoint maps {} features to {} classes; dataset has {} and {}",
            net.input_dim(),
            net.num_classes(),
            ds.feature_dim(),
            ds.num_classes()
        )));
    }
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    let acc = evaluate(&net, &ds, split)?;
    println!(
        "{}: top-1 {:.4}, top-{} {:.4} on {} samples",
        a.checkpoint.display(),
        acc.top1,
        ds.num_classes().min(5),
        acc.top5,
        ds.indices(split).len()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    for d in &a.runs {
        if !d.is_dir() {
            bail!(usage(format!("{} is not a run directory", d.display())));
        }
    }
    let out = report(&a.runs, &a.output, a.params)?;
    print!("{}", out.text);
    println!("series files: {}", out.series_files.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::PretrainTeacher(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
