//! Distillation losses and the entropy-based confidence weight.
//!
//! Every loss is reduced by the arithmetic mean over the batch. Entropy is
//! measured in nats on the teacher's untempered softmax; the temperature
//! only enters the soft-target and peer terms, each scaled by `τ²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};

const ROW_SUM_TOL: f64 = 1e-9;
const ENTROPY_CLAMP_TOL: f64 = 1e-9;

/// Argument order of the KL terms: `StudentFirst` is `KL(student ‖ target)`,
/// `TargetFirst` is the Hinton-style `KL(target ‖ student)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    #[default]
    StudentFirst,
    TargetFirst,
}

fn check_rows_sum_to_one(probs: &Tensor, what: &str) -> Result<()> {
    let (m, _) = probs.expect_matrix("distribution")?;
    for i in 0..m {
        let row = probs.row(i);
        if let Some(bad) = row.iter().find(|&&p| !(p >= 0.0)) {
            return Err(Error::Distribution(format!("{what} row {i} has entry {bad}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Distribution(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Per-row predictive entropy `−Σ p ln p` in nats, with `0 · ln 0 = 0`.
pub fn entropy(probs: &Tensor) -> Result<Vec<f64>> {
    check_rows_sum_to_one(probs, "probabilities")?;
    let c = probs.cols();
    Ok(probs
        .data()
        .chunks(c)
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect())
}

/// `w = 1 − H / ln C`, clamped to `[0, 1]`.
pub fn confidence_weight(entropy: &[f64], num_classes: usize) -> Result<Vec<f64>> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!(
            "confidence weight needs at least 2 classes, got {num_classes}"
        )));
    }
    let max_entropy = (num_classes as f64).ln();
    entropy
        .iter()
        .map(|&h| {
            if !(h >= -ENTROPY_CLAMP_TOL && h <= max_entropy + ENTROPY_CLAMP_TOL) {
                return Err(Error::Parameter(format!(
                    "entropy {h} outside [0, ln {num_classes}]"
                )));
            }
            Ok((1.0 - h / max_entropy).clamp(0.0, 1.0))
        })
        .collect()
}

/// Teacher uncertainty for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStats {
    pub entropy: Vec<f64>,
    pub weight: Vec<f64>,
    pub mean_entropy: f64,
    pub mean_weight: f64,
    pub num_classes: usize,
}

impl UncertaintyStats {
    /// Entropy and confidence weight of the plain (τ = 1) softmax of `logits`.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let probs = logits.softmax(1.0)?;
        Self::from_probs(&probs)
    }

    pub fn from_probs(probs: &Tensor) -> Result<Self> {
        let num_classes = probs.cols();
        let entropy = entropy(probs)?;
        let weight = confidence_weight(&entropy, num_classes)?;
        let n = entropy.len().max(1) as f64;
        Ok(Self {
            mean_entropy: entropy.iter().sum::<f64>() / n,
            mean_weight: weight.iter().sum::<f64>() / n,
            entropy,
            weight,
            num_classes,
        })
    }
}

/// Per-row `Σ_c exp(log_q) · (log_q − log_p)`.
pub fn kl_div(log_q: &Tensor, log_p: &Tensor) -> Result<Vec<f64>> {
    if log_q.shape() != log_p.shape() {
        return Err(Error::Dimension {
            op: "kl_div",
            lhs: log_q.shape().to_vec(),
            rhs: log_p.shape().to_vec(),
        });
    }
    for (t, name) in [(log_q, "log_q"), (log_p, "log_p")] {
        let mut probs = t.clone();
        probs.data_mut().iter_mut().for_each(|v| *v = v.exp());
        check_rows_sum_to_one(&probs, name)?;
    }
    let c = log_q.cols();
    Ok(log_q
        .data()
        .chunks(c)
        .zip(log_p.data().chunks(c))
        .map(|(q, p)| q.iter().zip(p).map(|(lq, lp)| lq.exp() * (lq - lp)).sum())
        .collect())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be positive, got {tau}")))
    }
}

/// Per-row KL between two log-distributions recorded in the graph.
fn kl_rows(g: &mut Graph, log_a: Var, log_b: Var) -> Result<Var> {
    let a = g.exp(log_a)?;
    let diff = g.sub(log_a, log_b)?;
    let prod = g.mul(a, diff)?;
    g.row_sum(prod)
}

fn directed_kl(g: &mut Graph, student: Var, target: Var, dir: KlDirection) -> Result<Var> {
    match dir {
        KlDirection::StudentFirst => kl_rows(g, student, target),
        KlDirection::TargetFirst => kl_rows(g, target, student),
    }
}

/// Cross-entropy against integer labels, averaged over the batch.
pub fn hard_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = g.value(logits).cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let log_p = g.log_softmax(logits, 1.0)?;
    let picked = g.pick(log_p, labels)?;
    let mean = g.mean(picked)?;
    g.scale(mean, -1.0)
}

/// `mean_i w_i · τ² · KL(q_student^τ ‖ p_teacher^τ)`. The teacher logits
/// enter as a constant.
pub fn teacher_loss(
    g: &mut Graph,
    student_logits: Var,
    teacher_logits: &Tensor,
    weights: &[f64],
    tau: f64,
    direction: KlDirection,
) -> Result<Var> {
    check_tau(tau)?;
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Parameter(format!("confidence weight {w} outside [0, 1]")));
    }
    let log_q = g.log_softmax(student_logits, tau)?;
    let teacher = g.constant(&teacher_logits.log_softmax(tau)?)?;
    let kl = directed_kl(g, log_q, teacher, direction)?;
    let scaled = g.scale(kl, tau * tau)?;
    g.weighted_mean(scaled, weights)
}

/// `mean_i τ² · KL(q_self^τ ‖ detach(q_peer^τ))`. No gradient reaches the peer.
pub fn peer_loss(
    g: &mut Graph,
    self_logits: Var,
    peer_logits: Var,
    tau: f64,
    direction: KlDirection,
) -> Result<Var> {
    check_tau(tau)?;
    let log_q = g.log_softmax(self_logits, tau)?;
    let peer = g.detach(peer_logits);
    let log_peer = g.log_softmax(peer, tau)?;
    let kl = directed_kl(g, log_q, log_peer, direction)?;
    let scaled = g.scale(kl, tau * tau)?;
    g.mean(scaled)
}

/// Mixing coefficients of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, hard: f64, teacher: f64, peer: f64) -> f64 {
        self.alpha * hard + self.beta * teacher + self.gamma * peer
    }
}

/// Scalar record of one student's loss on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub hard: f64,
    pub teacher: f64,
    pub peer: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl LossBreakdown {
    /// `|total − (α·hard + β·teacher + γ·peer)|`.
    pub fn recombination_error(&self) -> f64 {
        let w = LossWeights::new(self.alpha, self.beta, self.gamma);
        (self.total - w.combine(self.hard, self.teacher, self.peer)).abs()
    }
}

/// `α·hard + β·teacher + γ·peer`. Terms with a zero weight are left out of
/// the graph entirely, so they contribute neither value nor gradient.
/// `teacher` and `peer` may be absent when their weight is zero.
pub fn total_loss(
    g: &mut Graph,
    hard: Var,
    teacher: Option<Var>,
    peer: Option<Var>,
    weights: LossWeights,
    tau: f64,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let (h, t, p) = (g.value(hard).item(), value(g, teacher), value(g, peer));

    let mut total: Option<Var> = None;
    for (term, w, name) in [
        (Some(hard), weights.alpha, "hard"),
        (teacher, weights.beta, "teacher"),
        (peer, weights.gamma, "peer"),
    ] {
        if w == 0.0 {
            continue;
        }
        let term = term.ok_or_else(|| Error::Contract(format!("{name} loss missing but weighted {w}")))?;
        let scaled = g.scale(term, w)?;
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(&Tensor::scalar(0.0))?,
    };
    let breakdown = LossBreakdown {
        hard: h,
        teacher: t,
        peer: p,
        total: g.value(total).item(),
        alpha: weights.alpha,
        beta: weights.beta,
        gamma: weights.gamma,
        tau,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn entropy_closed_forms() {
        let h = entropy(&rows(&[vec![0.25; 4], vec![0.0, 1.0, 0.0, 0.0]])).unwrap();
        assert!((h[0] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(h[1], 0.0);
        let h = entropy(&rows(&[vec![0.7, 0.2, 0.1]])).unwrap();
        assert!((h[0] - 0.801_818_552_543_337_2).abs() < 1e-12, "{}", h[0]);
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(matches!(entropy(&rows(&[vec![0.5, 0.6]])), Err(Error::Distribution(_))));
        assert!(matches!(entropy(&rows(&[vec![1.5, -0.5]])), Err(Error::Distribution(_))));
    }

    #[test]
    fn confidence_weight_endpoints() {
        let c = 100;
        let w = confidence_weight(&[0.0, (c as f64).ln(), 0.8474], c).unwrap();
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - 0.8160).abs() < 5e-5, "{}", w[2]);
        assert!(matches!(confidence_weight(&[0.1], 1), Err(Error::Parameter(_))));
        assert!(confidence_weight(&[5.0], 100).is_err());
    }

    #[test]
    fn kl_values() {
        let q = rows(&[vec![0.5f64.ln(), 0.5f64.ln()]]);
        let p = rows(&[vec![0.9f64.ln(), 0.1f64.ln()]]);
        let kl = kl_div(&q, &p).unwrap();
        assert!((kl[0] - 0.510_825_623_765_990_7).abs() < 1e-12, "{}", kl[0]);
        assert!(kl_div(&q, &q).unwrap()[0].abs() < 1e-15);
        let bad = rows(&[vec![0.0, 0.0]]);
        assert!(matches!(kl_div(&bad, &p), Err(Error::Distribution(_))));
    }

    #[test]
    fn hard_loss_uniform_and_confident() {
        let mut g = Graph::new();
        let z = g.constant(&rows(&[vec![0.0; 10], vec![0.0; 10]])).unwrap();
        let l = hard_loss(&mut g, z, &[3, 7]).unwrap();
        assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);

        let z = g.constant(&rows(&[vec![40.0, 0.0, 0.0]])).unwrap();
        let l = hard_loss(&mut g, z, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-6);

        assert!(matches!(hard_loss(&mut g, z, &[3]), Err(Error::Label { label: 3, classes: 3 })));
    }

    #[test]
    fn teacher_loss_zero_weight_is_exactly_zero() {
        let mut g = Graph::new();
        let s = g.constant(&rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 2.0]])).unwrap();
        let t = rows(&[vec![-1.0, 2.0, 0.0], vec![1.0, 0.0, 0.0]]);
        let l = teacher_loss(&mut g, s, &t, &[0.0, 0.0], 4.0, KlDirection::StudentFirst).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert!(teacher_loss(&mut g, s, &t, &[1.0, 1.0], 0.0, KlDirection::StudentFirst).is_err());
        assert!(teacher_loss(&mut g, s, &t, &[1.5, 1.0], 1.0, KlDirection::StudentFirst).is_err());
    }

    #[test]
    fn teacher_loss_unit_weight_tau_one_is_mean_kl() {
        let s = rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 2.0]]);
        let t = rows(&[vec![-1.0, 2.0, 0.0], vec![1.0, 0.0, 0.0]]);
        let mut g = Graph::new();
        let sv = g.constant(&s).unwrap();
        let l = teacher_loss(&mut g, sv, &t, &[1.0, 1.0], 1.0, KlDirection::StudentFirst).unwrap();
        let kl = kl_div(&s.log_softmax(1.0).unwrap(), &t.log_softmax(1.0).unwrap()).unwrap();
        let expect = (kl[0] + kl[1]) / 2.0;
        assert!((g.value(l).item() - expect).abs() < 1e-14);
    }

    #[test]
    fn peer_loss_identical_logits_is_zero() {
        let z = rows(&[vec![1.0, -2.0, 0.5]]);
        let mut g = Graph::new();
        let a = g.constant(&z).unwrap();
        let b = g.constant(&z).unwrap();
        let l = peer_loss(&mut g, a, b, 4.0, KlDirection::StudentFirst).unwrap();
        assert!(g.value(l).item().abs() < 1e-15);
    }

    #[test]
    fn total_loss_combinations() {
        let mut g = Graph::new();
        let one = g.constant(&Tensor::scalar(1.0)).unwrap();
        let (t, b) = total_loss(&mut g, one, Some(one), Some(one), LossWeights::new(0.4, 0.4, 0.2), 4.0).unwrap();
        assert!((g.value(t).item() - 1.0).abs() < 1e-15);
        assert!(b.recombination_error() < 1e-12);

        let h = g.constant(&Tensor::scalar(0.7)).unwrap();
        let p1 = g.constant(&Tensor::scalar(3.0)).unwrap();
        let p2 = g.constant(&Tensor::scalar(9.0)).unwrap();
        let w = LossWeights::new(0.4, 0.4, 0.0);
        let (a, _) = total_loss(&mut g, h, Some(one), Some(p1), w, 4.0).unwrap();
        let (b, _) = total_loss(&mut g, h, Some(one), Some(p2), w, 4.0).unwrap();
        assert_eq!(g.value(a).item(), g.value(b).item());

        let (t, _) = total_loss(&mut g, h, Some(one), Some(p1), LossWeights::new(1.0, 0.0, 0.0), 4.0).unwrap();
        assert_eq!(g.value(t).item(), 0.7);

        assert!(total_loss(&mut g, h, None, None, LossWeights::new(1.0, -0.1, 0.0), 4.0).is_err());
    }
}
