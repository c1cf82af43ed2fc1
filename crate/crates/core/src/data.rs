//! Seeded Gaussian-mixture classification data.
//!
//! Class means sit on the unit sphere and samples are drawn from
//! `N(mean_c, σ²·I)`, so `σ` controls how much the classes overlap and thus
//! how uncertain a well-trained teacher remains. Features are normalized
//! with statistics from the training split.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng;

pub const DATASET_MAGIC: &[u8; 4] = b"UKDD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub overlap_sigma: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 500,
            feature_dim: 16,
            overlap_sigma: 0.6,
            seed: 1,
            val_fraction: 0.1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.feature_dim < 2 {
            return Err(Error::Spec(format!("feature_dim must be >= 2, got {}", self.feature_dim)));
        }
        if !(self.overlap_sigma > 0.0 && self.overlap_sigma.is_finite()) {
            return Err(Error::Spec(format!("overlap_sigma must be positive, got {}", self.overlap_sigma)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Spec("samples_per_class must be positive".into()));
        }
        check_val_fraction(self.val_fraction)
    }
}

fn check_val_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Spec(format!("val_fraction must lie in (0, 1), got {f}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Per-feature mean and (population) standard deviation of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    feature_dim: usize,
    labels: Vec<usize>,
    raw: Vec<f64>,
    normalized: Vec<f64>,
    train: Vec<usize>,
    val: Vec<usize>,
    norm: NormStats,
}

/// Unit-norm class means, a pure function of `(seed, C, dim)`.
pub fn class_means(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let mut r = rng::stream(spec.seed, rng::DATA_MEANS, 0);
    (0..spec.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = class_means(spec);
    let mut r = rng::stream(spec.seed, rng::DATA_SAMPLES, 0);
    let n = spec.num_classes * spec.samples_per_class;
    let mut labels = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * spec.feature_dim);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            labels.push(c);
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut r);
                raw.push(m + spec.overlap_sigma * z);
            }
        }
    }
    Dataset::from_parts(spec.num_classes, spec.feature_dim, labels, raw, spec.val_fraction)
}

/// Monte Carlo estimate of the Bayes-optimal accuracy. With equal priors and
/// a shared isotropic covariance the posterior argmax is the nearest true
/// class mean.
pub fn bayes_accuracy(spec: &DatasetSpec, samples: usize) -> Result<f64> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::Parameter("need at least one probe sample".into()));
    }
    let means = class_means(spec);
    let mut r = rng::stream(spec.seed, rng::BAYES_PROBE, 0);
    let mut correct = 0usize;
    let mut x = vec![0.0; spec.feature_dim];
    for i in 0..samples {
        let c = i % spec.num_classes;
        for (xi, m) in x.iter_mut().zip(&means[c]) {
            let z: f64 = StandardNormal.sample(&mut r);
            *xi = m + spec.overlap_sigma * z;
        }
        if nearest(&means, &x) == c {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples as f64)
}

/// Index of the closest point in `centers` (lowest index on ties).
pub fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centers.iter().enumerate() {
        let d: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

impl Dataset {
    /// Builds a dataset from raw rows. The split is stratified: within each
    /// class, the last `round(count · val_fraction)` samples (in index order)
    /// form the validation set.
    pub fn from_parts(
        num_classes: usize,
        feature_dim: usize,
        labels: Vec<usize>,
        raw: Vec<f64>,
        val_fraction: f64,
    ) -> Result<Self> {
        check_val_fraction(val_fraction)?;
        if num_classes < 2 || feature_dim == 0 {
            return Err(Error::Spec(format!(
                "invalid shape: {num_classes} classes, {feature_dim} features"
            )));
        }
        if raw.len() != labels.len() * feature_dim {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: vec![labels.len(), feature_dim],
                rhs: vec![raw.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label {
                label,
                classes: num_classes,
            });
        }

        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for idx in &by_class {
            let n_val = (idx.len() as f64 * val_fraction).round() as usize;
            let cut = idx.len() - n_val.min(idx.len());
            train.extend_from_slice(&idx[..cut]);
            val.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data(format!(
                "split leaves {} train and {} val samples",
                train.len(),
                val.len()
            )));
        }

        let n_train = train.len() as f64;
        let mut mean = vec![0.0; feature_dim];
        for &i in &train {
            for (m, x) in mean.iter_mut().zip(&raw[i * feature_dim..(i + 1) * feature_dim]) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_train);
        let mut var = vec![0.0; feature_dim];
        for &i in &train {
            for ((v, x), m) in var.iter_mut().zip(&raw[i * feature_dim..(i + 1) * feature_dim]).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / n_train).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let normalized = raw
            .chunks(feature_dim)
            .flat_map(|row| row.iter().zip(&mean).zip(&std).map(|((x, m), s)| (x - m) / s))
            .collect();

        Ok(Self {
            num_classes,
            feature_dim,
            labels,
            raw,
            normalized,
            train,
            val,
            norm: NormStats { mean, std },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn normalized_row(&self, i: usize) -> &[f64] {
        &self.normalized[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// Normalized features and labels of `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(self.normalized_row(i));
        }
        Batch {
            indices: indices.to_vec(),
            features: Tensor::new(vec![indices.len(), self.feature_dim], data).expect("shape matches"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes the binary `UKDD` format (raw, unnormalized features).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.len() + 8 * self.raw.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [self.num_classes, self.len(), self.feature_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for x in &self.raw {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], val_fraction: f64) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected UKDD".into(),
            });
        }
        let version_at = r.offset();
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: version_at,
                msg: format!("unsupported version {version}"),
            });
        }
        let classes = r.u32()? as usize;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let labels = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let raw = (0..n * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Dataset::from_parts(classes, dim, labels, raw, val_fraction)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, val_fraction: f64) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, val_fraction)
    }

    /// CSV with header `label,f0,...,f{dim-1}` and raw features.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for j in 0..self.feature_dim {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for x in self.raw_row(i) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Little-endian cursor reporting the offset of any truncation.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// One minibatch of normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Splits `split` into minibatches. Training order is a permutation keyed
/// by `(shuffle_seed, epoch)`; validation keeps index order. The last
/// partial batch is kept.
pub fn batches(ds: &Dataset, split: Split, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    batches_in_stream(ds, split, batch_size, shuffle_seed, rng::SHUFFLE, epoch)
}

pub(crate) fn batches_in_stream(
    ds: &Dataset,
    split: Split,
    batch_size: usize,
    shuffle_seed: u64,
    domain: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    let mut order = ds.indices(split).to_vec();
    if order.is_empty() {
        return Err(Error::Data(format!("{split:?} split is empty")));
    }
    if split == Split::Train {
        let mut r = rng::stream(shuffle_seed, domain, epoch as u64);
        order.shuffle(&mut r);
    }
    Ok(order.chunks(batch_size).map(|c| ds.gather(c)).collect())
}

/// Training-time perturbation standing in for image augmentation: additive
/// Gaussian noise with standard deviation `noise`, and, when `flip` is on,
/// a sign flip of one uniformly chosen coordinate applied to each sample
/// with probability 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise: f64,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise: 0.05,
            flip: false,
        }
    }
}

/// Applies [`AugmentConfig`] and counts how many batches it touched.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    config: AugmentConfig,
    calls: usize,
}

impl Augmenter {
    pub fn new(config: AugmentConfig) -> Result<Self> {
        if !(config.noise >= 0.0 && config.noise.is_finite()) {
            return Err(Error::Parameter(format!("augmentation strength must be >= 0, got {}", config.noise)));
        }
        Ok(Self { config, calls: 0 })
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn apply<R: Rng + ?Sized>(&mut self, x: &mut Tensor, rng: &mut R) {
        self.calls += 1;
        let AugmentConfig { noise, flip } = self.config;
        if noise == 0.0 && !flip {
            return;
        }
        let dim = x.cols();
        for row in x.data_mut().chunks_mut(dim) {
            if noise > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += noise * z;
                }
            }
            if flip && rng.random_bool(0.5) {
                let j = rng.random_range(0..dim);
                row[j] = -row[j];
            }
        }
    }
}
