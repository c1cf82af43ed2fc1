use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ukd_core::data::Dataset;
use ukd_core::harness::RunSummary;

const TINY: &str = r#"
epochs = 2
teacher_epochs = 1
batch_size = 16
teacher_hidden = [16]
student1_hidden = [8, 8]
student2_hidden = [6]

[dataset]
num_classes = 6
samples_per_class = 30
feature_dim = 5
overlap_sigma = 0.6
val_fraction = 0.2
"#;

fn ukd(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ukd"))
        .args(args)
        .env("UKD_RUN_ROOT", root)
        .output()
        .expect("spawn ukd")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        ukd(args, &self.path("root"))
    }

    fn train(&self, mode: &str, block: &str, out: &str) -> String {
        ok(&self.run(&["train", "--mode", mode, "--config", &self.s("tiny.toml"), "--seed-block", block, "-o", &self.s(out)]))
    }
}

#[test]
fn gen_data_round_trips_and_is_deterministic() {
    let env = Env::new();
    let args = |o: &str| {
        vec![
            "gen-data".to_string(),
            "--classes".into(),
            "10".into(),
            "--per-class".into(),
            "500".into(),
            "--dim".into(),
            "16".into(),
            "--sigma".into(),
            "0.6".into(),
            "--seed".into(),
            "1".into(),
            "-o".into(),
            env.s(o),
        ]
    };
    let a: Vec<String> = args("a.ukdd");
    let stdout = ok(&env.run(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(stdout.contains("N = 5000, C = 10, dim = 16"), "{stdout}");
    assert!(stdout.contains("Bayes"));
    let b: Vec<String> = args("b.ukdd");
    ok(&env.run(&b.iter().map(String::as_str).collect::<Vec<_>>()));
    let bytes = fs::read(env.path("a.ukdd")).unwrap();
    assert_eq!(bytes, fs::read(env.path("b.ukdd")).unwrap());
    let ds = Dataset::load(&env.path("a.ukdd"), 0.1).unwrap();
    assert_eq!(ds.to_bytes(), bytes);
    assert_eq!((ds.len(), ds.num_classes(), ds.feature_dim()), (5000, 10, 16));
}

#[test]
fn gen_data_without_output_is_a_usage_error() {
    let env = Env::new();
    assert_eq!(env.run(&["gen-data", "--classes", "3"]).status.code(), Some(2));
    assert_eq!(env.run(&["gen-data", "--classes", "1", "-o", &env.s("x.ukdd")]).status.code(), Some(2));
}

#[test]
fn help_lists_default_hyperparameters() {
    let env = Env::new();
    let help = ok(&env.run(&["train", "--help"]));
    for needle in [
        "--tau",
        "[default: 4.0]",
        "--eta0",
        "[default: 0.1]",
        "--momentum",
        "[default: 0.9]",
        "--weight-decay",
        "[default: 1e-4]",
        "--alpha",
        "--beta",
        "--gamma",
        "--epochs",
        "--batch-size",
        "--seed-block",
        "--kl-direction",
        "--teacher",
        "--data",
        "UKD_RUN_ROOT",
    ] {
        assert!(help.contains(needle), "missing {needle}");
    }
    // The documented defaults are the ones actually used.
    let d = ukd_core::harness::TrainConfig::default();
    assert_eq!((d.tau, d.eta0, d.momentum, d.weight_decay), (4.0, 0.1, 0.9, 1e-4));
    assert_eq!((d.epochs, d.batch_size, d.teacher_epochs), (30, 64, 3));
}

#[test]
fn train_twice_gives_identical_artifacts() {
    let env = Env::new();
    let stdout = env.train("dual", "7", "a");
    assert!(stdout.contains("student1"));
    env.train("dual", "7", "b");
    for f in ["metrics.csv", "teacher.ukdc", "student1_best.ukdc", "student2_final.ukdc", "config.toml"] {
        assert_eq!(fs::read(env.path("a").join(f)).unwrap(), fs::read(env.path("b").join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(env.path("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with(ukd_core::harness::METRICS_HEADER));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    let s = RunSummary::read(&env.path("a/summary.toml")).unwrap();
    assert_eq!(s.config.seeds, ukd_core::harness::SeedBlock::from_block(7));
}

#[test]
fn inconsistent_mode_weights_are_rejected() {
    let env = Env::new();
    let out = env.run(&["train", "--mode", "kd", "--gamma", "0.2", "--config", &env.s("tiny.toml"), "-o", &env.s("x")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    assert!(!env.path("x").exists());
    assert_eq!(env.run(&["train", "--mode", "bogus"]).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let env = Env::new();
    fs::write(env.path("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let out = env.run(&["train", "--config", &env.s("bad.toml"), "-o", &env.s("x")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let env = Env::new();
    fs::write(env.path("c.toml"), format!("{TINY}\n").replace("epochs = 2\n", "epochs = 2\ntau = 2.0\n")).unwrap();
    ok(&env.run(&["train", "--mode", "ukd", "--config", &env.s("c.toml"), "--tau", "3.0", "-o", &env.s("r")]));
    let s = RunSummary::read(&env.path("r/summary.toml")).unwrap();
    assert_eq!(s.config.tau, 3.0);
    assert_eq!((s.config.alpha, s.config.beta, s.config.gamma), (0.3, 0.7, 0.0));
    ok(&env.run(&["train", "--mode", "ukd", "--config", &env.s("c.toml"), "-o", &env.s("r2")]));
    assert_eq!(RunSummary::read(&env.path("r2/summary.toml")).unwrap().config.tau, 2.0);
}

#[test]
fn numeric_blow_up_exits_with_code_3() {
    let env = Env::new();
    let out = env.run(&["train", "--config", &env.s("tiny.toml"), "--eta0", "1e300", "-o", &env.s("nan")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn default_output_goes_under_run_root_and_is_not_clobbered() {
    let env = Env::new();
    let args = ["train", "--mode", "hard", "--config", &env.s("tiny.toml")];
    ok(&env.run(&args));
    assert!(env.path("root/hard-block1/summary.toml").exists());
    assert_eq!(env.run(&args).status.code(), Some(2));
}

#[test]
fn pretrained_teacher_and_dataset_files_are_reused() {
    let env = Env::new();
    ok(&env.run(&["pretrain-teacher", "--config", &env.s("tiny.toml"), "-o", &env.s("t/teacher.ukdc")]));
    env.train("ukd", "1", "fresh");
    ok(&env.run(&[
        "train",
        "--mode",
        "ukd",
        "--config",
        &env.s("tiny.toml"),
        "--teacher",
        &env.s("t/teacher.ukdc"),
        "-o",
        &env.s("reused"),
    ]));
    assert_eq!(
        fs::read(env.path("fresh/metrics.csv")).unwrap(),
        fs::read(env.path("reused/metrics.csv")).unwrap()
    );

    ok(&env.run(&[
        "gen-data", "--classes", "6", "--per-class", "30", "--dim", "5", "--seed", "1", "--val-fraction", "0.2", "-o",
        &env.s("d.ukdd"),
    ]));
    ok(&env.run(&["train", "--mode", "ukd", "--config", &env.s("tiny.toml"), "--data", &env.s("d.ukdd"), "-o", &env.s("from_file")]));
    assert_eq!(
        fs::read(env.path("fresh/metrics.csv")).unwrap(),
        fs::read(env.path("from_file/metrics.csv")).unwrap()
    );

    // A teacher with the wrong shape is a configuration error.
    ok(&env.run(&["gen-data", "--classes", "3", "--per-class", "10", "--dim", "5", "-o", &env.s("other.ukdd")]));
    let out = env.run(&["train", "--config", &env.s("tiny.toml"), "--data", &env.s("other.ukdd"), "--teacher", &env.s("t/teacher.ukdc"), "-o", &env.s("bad")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_matches_the_run_summary() {
    let env = Env::new();
    env.train("dual", "2", "run");
    let s = RunSummary::read(&env.path("run/summary.toml")).unwrap();
    let stdout = ok(&env.run(&[
        "eval",
        "--checkpoint",
        &env.s("run/student2_final.ukdc"),
        "--config",
        &env.s("tiny.toml"),
        "--seed-block",
        "2",
    ]));
    let want = format!("top-1 {:.4}", s.student("student2").unwrap().final_val_top1);
    assert!(stdout.contains(&want), "{stdout} lacks {want}");
    let out = env.run(&["eval", "--checkpoint", &env.s("run/student2_final.ukdc")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_with_one_seed_equals_four_train_runs() {
    let env = Env::new();
    let stdout = ok(&env.run(&["ablate", "--config", &env.s("tiny.toml"), "--seeds", "1", "--first-block", "5", "-o", &env.s("abl")]));
    for label in ["hard_only", "plus_teacher", "plus_uncertainty", "plus_peer"] {
        assert!(stdout.contains(label));
    }
    let csv = fs::read_to_string(env.path("abl/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "configuration,student,mean_val_top1,std_val_top1,n_seeds,mean_best_val_top1,per_seed_val_top1"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    for student in ["student1", "student2"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(student)).count(), 4);
    }
    for mode in ["hard", "kd", "ukd", "dual"] {
        env.train(mode, "5", mode);
        assert_eq!(
            fs::read(env.path(mode).join("metrics.csv")).unwrap(),
            fs::read(env.path("abl/seed5").join(mode).join("metrics.csv")).unwrap(),
            "{mode}"
        );
    }
    ok(&env.run(&["ablate", "--config", &env.s("tiny.toml"), "--seeds", "1", "--first-block", "5", "--jobs", "2", "--no-run-dirs", "-o", &env.s("abl2")]));
    assert_eq!(csv, fs::read_to_string(env.path("abl2/ablation.csv")).unwrap());
    assert!(!env.path("abl2/seed5").exists());
}

#[test]
fn report_builds_deltas_compression_and_series() {
    let env = Env::new();
    env.train("kd", "3", "kd");
    env.train("dual", "3", "dual");
    let stdout = ok(&env.run(&[
        "report",
        &env.s("kd"),
        &env.s("dual"),
        "-o",
        &env.s("rep"),
        "--params",
        "25.6e6,11.7e6,3.5e6",
    ]));
    assert!(stdout.contains("25.6M / 11.7M params = 2.19×"), "{stdout}");
    assert!(stdout.contains("7.31×"));

    let kd = RunSummary::read(&env.path("kd/summary.toml")).unwrap();
    let dual = RunSummary::read(&env.path("dual/summary.toml")).unwrap();
    for name in ["student1", "student2"] {
        let delta = dual.student(name).unwrap().final_val_top1 - kd.student(name).unwrap().final_val_top1;
        let line = stdout.lines().find(|l| l.starts_with(name) && l.contains('.')).unwrap();
        let cols: Vec<f64> = line.split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
        assert!((cols[2] - 100.0 * delta).abs() < 0.006, "{line}");
        assert!((cols[2] - (cols[1] - cols[0])).abs() < 0.011);
    }
    for run in ["kd", "dual"] {
        for s in ["student1", "student2"] {
            let series = fs::read_to_string(env.path("rep").join(format!("{run}_{s}_series.csv"))).unwrap();
            assert_eq!(series.lines().count(), 1 + 2);
        }
    }
    assert!(env.path("rep/report.txt").exists());
}

#[test]
fn report_rejects_missing_or_incomplete_inputs() {
    let env = Env::new();
    assert_eq!(env.run(&["report", &env.s("nope"), "-o", &env.s("rep")]).status.code(), Some(2));
    env.train("dual", "1", "dual");
    assert_eq!(env.run(&["report", &env.s("dual"), "-o", &env.s("rep")]).status.code(), Some(2));
    assert_eq!(env.run(&["report", "-o", &env.s("rep")]).status.code(), Some(2));
}
