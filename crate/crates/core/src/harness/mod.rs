//! Training protocols, evaluation, metrics, checkpoints, and the ablation
//! ladder.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod report;
pub mod train;

pub use ablate::{ablate, AblationReport, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{DataConfig, Mode, SeedBlock, TrainConfig, Weighting};
pub use eval::{accuracy_from_logits, evaluate, Accuracy};
pub use metrics::{MetricsRecord, ModelSummary, RunSummary, UncertaintySummary, METRICS_HEADER};
pub use train::{
    pretrain_teacher, run_students, train, train_step, train_step_dual, train_with_teacher, RunOutput, RunResult,
    StepSettings, Student, StudentId,
};
