//! SGD with momentum and coupled weight decay, and the cosine learning-rate
//! schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Heavy-ball SGD. Per element:
///
/// ```text
/// g ← grad + λ·θ
/// v ← μ·v + g
/// θ ← θ − η·v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    /// Zero velocity shaped after `params`.
    pub fn new<'a>(
        params: impl IntoIterator<Item = &'a Tensor>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: params.into_iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update to `params`, which must be given in the same order
    /// (and with the same shapes) as at construction.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        let mut seen = 0;
        for (i, p) in params.into_iter().enumerate() {
            let v = self.velocity.get_mut(i).ok_or_else(|| {
                Error::Contract("more parameters than the optimizer was built for".into())
            })?;
            if v.len() != p.numel() {
                return Err(Error::Dimension {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![v.len()],
                });
            }
            let (theta, grad) = p.data_and_grad_mut();
            let grad = grad.ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
            for ((t, g), vel) in theta.iter_mut().zip(grad).zip(v.iter_mut()) {
                let g = g + self.weight_decay * *t;
                *vel = self.momentum * *vel + g;
                *t -= self.lr * *vel;
            }
            seen += 1;
        }
        if seen != self.velocity.len() {
            return Err(Error::Contract(format!(
                "optimizer expects {} parameters, got {seen}",
                self.velocity.len()
            )));
        }
        Ok(())
    }
}

/// `η(e) = η₀ · ½ (1 + cos(π e / E))`, stepped once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub eta0: f64,
    pub total_epochs: usize,
}

impl CosineSchedule {
    pub fn new(eta0: f64, total_epochs: usize) -> Result<Self> {
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::Parameter(format!("eta0 must be positive, got {eta0}")));
        }
        if total_epochs == 0 {
            return Err(Error::Parameter("total_epochs must be at least 1".into()));
        }
        Ok(Self { eta0, total_epochs })
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::Parameter(format!(
                "epoch {epoch} beyond schedule length {}",
                self.total_epochs
            )));
        }
        let progress = epoch as f64 / self.total_epochs as f64;
        Ok(self.eta0 * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::vector(values.to_vec()).with_requires_grad(true);
        t.accumulate_grad(grad).unwrap();
        t
    }

    #[test]
    fn zero_grad_no_decay_leaves_params() {
        let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
        let mut opt = Sgd::new([&p], 0.1, 0.9, 0.0).unwrap();
        opt.step([&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_plain_step() {
        let mut p = param(&[1.0], &[0.5]);
        let mut opt = Sgd::new([&p], 0.1, 0.0, 0.0).unwrap();
        opt.step([&mut p]).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = param(&[0.0], &[1.0]);
        let mut opt = Sgd::new([&p], 0.1, 0.9, 0.0).unwrap();
        opt.step([&mut p]).unwrap();
        assert!((opt.velocity()[0][0] - 1.0).abs() < 1e-15);
        assert!((p.data()[0] + 0.1).abs() < 1e-15);
        opt.step([&mut p]).unwrap();
        assert!((opt.velocity()[0][0] - 1.9).abs() < 1e-15);
        assert!((p.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_added_to_gradient() {
        let mut p = param(&[2.0], &[0.0]);
        let mut opt = Sgd::new([&p], 0.5, 0.0, 0.1).unwrap();
        opt.step([&mut p]).unwrap();
        // 2 − 0.5 · (0 + 0.1·2)
        assert!((p.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = Tensor::vector(vec![1.0]).with_requires_grad(true);
        let mut opt = Sgd::new([&p], 0.1, 0.0, 0.0).unwrap();
        assert!(matches!(opt.step([&mut p]), Err(Error::Contract(_))));
    }

    #[test]
    fn separate_optimizers_share_nothing() {
        let mut a = param(&[1.0], &[1.0]);
        let mut b = param(&[1.0], &[1.0]);
        let mut oa = Sgd::new([&a], 0.1, 0.9, 0.0).unwrap();
        let ob = Sgd::new([&b], 0.1, 0.9, 0.0).unwrap();
        let before = ob.clone();
        oa.step([&mut a]).unwrap();
        oa.step([&mut a]).unwrap();
        assert_eq!(ob, before);
        assert_eq!(b.data(), &[1.0]);
        let _ = &mut b;
    }

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule::new(0.1, 50).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.1);
        assert_eq!(s.lr_at(50).unwrap(), 0.0);
        assert!((s.lr_at(25).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(s.lr_at(51), Err(Error::Parameter(_))));
        assert!(CosineSchedule::new(0.0, 5).is_err());
        assert!(CosineSchedule::new(0.1, 0).is_err());
    }
}
