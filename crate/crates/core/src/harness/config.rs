//! Training configuration, seed blocks, and mode/weight consistency rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, DatasetSpec};
use crate::distill::{KlDirection, LossWeights};
use crate::error::{Error, Result};
use crate::nets::{mlp_spec, LayerSpec};

/// Training protocol. Each mode corresponds to one rung of the ablation
/// ladder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Cross-entropy only.
    HardOnly,
    /// Hard loss plus unweighted (w ≡ 1) soft-target loss.
    BaselineKd,
    /// Hard loss plus entropy-weighted soft-target loss.
    UncertaintyKd,
    /// Entropy-weighted soft targets plus peer distillation between students.
    #[default]
    Dual,
}

/// How per-sample teacher weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `w = 1 − H / ln C` from the teacher's prediction entropy.
    Entropy,
    /// `w ≡ 1`.
    Unit,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::HardOnly, Mode::BaselineKd, Mode::UncertaintyKd, Mode::Dual];

    pub fn default_weights(self) -> LossWeights {
        match self {
            Mode::HardOnly => LossWeights::new(1.0, 0.0, 0.0),
            Mode::BaselineKd | Mode::UncertaintyKd => LossWeights::new(0.3, 0.7, 0.0),
            Mode::Dual => LossWeights::new(0.4, 0.4, 0.2),
        }
    }

    pub fn weighting(self) -> Weighting {
        match self {
            Mode::HardOnly | Mode::BaselineKd => Weighting::Unit,
            Mode::UncertaintyKd | Mode::Dual => Weighting::Entropy,
        }
    }

    pub fn uses_peer(self) -> bool {
        self == Mode::Dual
    }

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Mode::HardOnly => "hard",
            Mode::BaselineKd => "kd",
            Mode::UncertaintyKd => "ukd",
            Mode::Dual => "dual",
        }
    }

    /// Row label in the ablation table.
    pub fn ladder_label(self) -> &'static str {
        match self {
            Mode::HardOnly => "hard_only",
            Mode::BaselineKd => "plus_teacher",
            Mode::UncertaintyKd => "plus_uncertainty",
            Mode::Dual => "plus_peer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" | "hard_only" => Ok(Mode::HardOnly),
            "kd" | "baseline_kd" => Ok(Mode::BaselineKd),
            "ukd" | "uncertainty_kd" => Ok(Mode::UncertaintyKd),
            "dual" => Ok(Mode::Dual),
            other => Err(Error::Config(format!("unknown mode '{other}' (hard|kd|ukd|dual)"))),
        }
    }
}

/// Independent seeds for every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    pub data: u64,
    pub teacher: u64,
    pub student1: u64,
    pub student2: u64,
    pub shuffle: u64,
}

impl SeedBlock {
    /// Deterministic seed block derived from one integer.
    pub fn from_block(block: u64) -> Self {
        Self {
            data: block,
            teacher: 1_000_000 + block,
            student1: 2_000_000 + block,
            student2: 3_000_000 + block,
            shuffle: 4_000_000 + block,
        }
    }
}

impl Default for SeedBlock {
    fn default() -> Self {
        Self::from_block(1)
    }
}

/// Dataset shape; the seed comes from [`SeedBlock::data`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub overlap_sigma: f64,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            num_classes: d.num_classes,
            samples_per_class: d.samples_per_class,
            feature_dim: d.feature_dim,
            overlap_sigma: d.overlap_sigma,
            val_fraction: d.val_fraction,
        }
    }
}

impl DataConfig {
    pub fn with_seed(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.num_classes,
            samples_per_class: self.samples_per_class,
            feature_dim: self.feature_dim,
            overlap_sigma: self.overlap_sigma,
            seed,
            val_fraction: self.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub epochs: usize,
    /// Teacher pretraining epochs. Longer pretraining overfits the default
    /// dataset and lowers the teacher's validation accuracy.
    pub teacher_epochs: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub kl_direction: KlDirection,
    /// Write measured seconds into the metrics CSV. Off by default so that
    /// metrics files are byte-reproducible.
    pub log_wall_time: bool,
    pub augment: AugmentConfig,
    pub seeds: SeedBlock,
    pub dataset: DataConfig,
    /// Hidden widths of the teacher MLP.
    pub teacher_hidden: Vec<usize>,
    pub student1_hidden: Vec<usize>,
    pub student2_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Dual)
    }
}

impl TrainConfig {
    /// Default hyperparameters with the loss weights of `mode`.
    pub fn for_mode(mode: Mode) -> Self {
        let w = mode.default_weights();
        Self {
            mode,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            tau: 4.0,
            epochs: 30,
            teacher_epochs: 3,
            batch_size: 64,
            eta0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            kl_direction: KlDirection::StudentFirst,
            log_wall_time: false,
            augment: AugmentConfig::default(),
            seeds: SeedBlock::default(),
            dataset: DataConfig::default(),
            teacher_hidden: vec![128, 128, 128],
            student1_hidden: vec![64, 64],
            student2_hidden: vec![32],
        }
    }

    /// Switches mode and resets the loss weights to that mode's defaults.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        let w = mode.default_weights();
        self.mode = mode;
        self.alpha = w.alpha;
        self.beta = w.beta;
        self.gamma = w.gamma;
        self
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        self.dataset.with_seed(self.seeds.data)
    }

    pub fn teacher_spec(&self) -> Vec<LayerSpec> {
        mlp_spec(self.dataset.feature_dim, &self.teacher_hidden, self.dataset.num_classes)
    }

    pub fn student1_spec(&self) -> Vec<LayerSpec> {
        mlp_spec(self.dataset.feature_dim, &self.student1_hidden, self.dataset.num_classes)
    }

    pub fn student2_spec(&self) -> Vec<LayerSpec> {
        mlp_spec(self.dataset.feature_dim, &self.student2_hidden, self.dataset.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.loss_weights()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        match self.mode {
            Mode::HardOnly if self.beta != 0.0 || self.gamma != 0.0 => {
                return cfg(format!(
                    "mode hard requires beta = gamma = 0 (got beta {}, gamma {})",
                    self.beta, self.gamma
                ));
            }
            Mode::BaselineKd | Mode::UncertaintyKd if self.gamma != 0.0 => {
                return cfg(format!(
                    "mode {} trains a single student and requires gamma = 0 (got {})",
                    self.mode, self.gamma
                ));
            }
            _ => {}
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return cfg(format!("tau must be positive, got {}", self.tau));
        }
        if self.epochs == 0 || self.teacher_epochs == 0 {
            return cfg("epochs and teacher_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return cfg("batch_size must be >= 1".into());
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return cfg(format!("eta0 must be positive, got {}", self.eta0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return cfg(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return cfg(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.augment.noise >= 0.0) {
            return cfg(format!("augment.noise must be >= 0, got {}", self.augment.noise));
        }
        self.dataset_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for (name, hidden) in [
            ("teacher_hidden", &self.teacher_hidden),
            ("student1_hidden", &self.student1_hidden),
            ("student2_hidden", &self.student2_hidden),
        ] {
            if hidden.contains(&0) {
                return cfg(format!("{name} contains a zero width"));
            }
        }
        if self.student1_hidden == self.student2_hidden {
            return cfg("the two students must differ in architecture".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config document. Loss weights the document leaves out take
    /// the defaults of its `mode`, not of the default mode.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg: Self = table.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let w = cfg.mode.default_weights();
        for (key, slot, default) in [
            ("alpha", &mut cfg.alpha, w.alpha),
            ("beta", &mut cfg.beta, w.beta),
            ("gamma", &mut cfg.gamma, w.gamma),
        ] {
            if !table.contains_key(key) {
                *slot = default;
            }
        }
        Ok(cfg)
    }
}
