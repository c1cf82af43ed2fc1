//! Shared oracles for the integration tests: a central-difference gradient
//! checker, random tensors, and a small training configuration.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ukd_core::gradcore::{Graph, Tensor, Var};
use ukd_core::harness::{Mode, TrainConfig};
use ukd_core::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Magnitude floor in the relative-error denominator, so that two gradients
/// that are both essentially zero do not produce a huge ratio.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Builds the scalar `f(inputs)` with every input as a tracked leaf and
/// compares reverse-mode gradients against central differences. Returns the
/// largest relative error over all input elements.
pub fn fd_check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; leaves[k].numel()]);
        for j in 0..leaves[k].numel() {
            let mut plus = leaves.clone();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = leaves.clone();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed random projection, so the
/// checker exercises every output element with a distinct weight.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let r = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let rv = g.constant(&r)?;
    let prod = g.mul(x, rv)?;
    g.sum(prod)
}

/// A configuration small enough for whole-protocol tests to run in well
/// under a second per run.
pub fn tiny_config(mode: Mode) -> TrainConfig {
    let mut cfg = TrainConfig::for_mode(mode);
    cfg.dataset.num_classes = 4;
    cfg.dataset.samples_per_class = 40;
    cfg.dataset.feature_dim = 6;
    cfg.epochs = 3;
    cfg.teacher_epochs = 2;
    cfg.batch_size = 16;
    cfg.teacher_hidden = vec![24, 24];
    cfg.student1_hidden = vec![12, 8];
    cfg.student2_hidden = vec![6];
    cfg
}

/// One gradient-check case: name, worst relative error.
pub type CaseResult = (&'static str, f64);

fn shape2(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(1..5), r.random_range(2..6))
}

fn away_from_zero(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
}

/// Random instances of every differentiable op and every loss, `per_op` of
/// each. `detach` is absent: it deliberately disagrees with finite
/// differences and is covered by the gradient-isolation tests instead.
pub fn gradient_suite(seed: u64, per_op: usize) -> Vec<CaseResult> {
    use ukd_core::distill::{self, KlDirection, LossWeights};

    let mut out = Vec::new();
    for i in 0..per_op as u64 {
        let mut r = rng(seed.wrapping_mul(1000).wrapping_add(i));
        let ps = r.random::<u64>();
        let (m, n) = shape2(&mut r);
        let k = r.random_range(1..5);

        let a = uniform(&mut r, &[m, k], -1.5, 1.5);
        let b = uniform(&mut r, &[k, n], -1.5, 1.5);
        out.push(("matmul", fd_check(&[a, b], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, ps)
        })));

        let x = uniform(&mut r, &[m, n], -2.0, 2.0);
        let bias = uniform(&mut r, &[n], -1.0, 1.0);
        out.push(("add_bias", fd_check(&[x, bias], |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            project(g, y, ps)
        })));

        let mut x = uniform(&mut r, &[m, n], -2.0, 2.0);
        away_from_zero(&mut x);
        out.push(("relu", fd_check(&[x], |g, v| {
            let y = g.relu(v[0]);
            project(g, y, ps)
        })));

        let x = uniform(&mut r, &[m, n], -3.0, 3.0);
        let tau = r.random_range(0.5..5.0);
        out.push(("log_softmax", fd_check(&[x], |g, v| {
            let y = g.log_softmax(v[0], tau)?;
            project(g, y, ps)
        })));

        let x = uniform(&mut r, &[m, n], -2.0, 2.0);
        let y = uniform(&mut r, &[m, n], -2.0, 2.0);
        out.push(("add", fd_check(&[x.clone(), y.clone()], |g, v| {
            let z = g.add(v[0], v[1])?;
            project(g, z, ps)
        })));
        out.push(("sub", fd_check(&[x.clone(), y.clone()], |g, v| {
            let z = g.sub(v[0], v[1])?;
            project(g, z, ps)
        })));
        out.push(("mul", fd_check(&[x.clone(), y], |g, v| {
            let z = g.mul(v[0], v[1])?;
            project(g, z, ps)
        })));
        out.push(("exp", fd_check(&[x.clone()], |g, v| {
            let z = g.exp(v[0])?;
            project(g, z, ps)
        })));
        let factor = r.random_range(-3.0..3.0);
        out.push(("scale", fd_check(&[x.clone()], |g, v| {
            let z = g.scale(v[0], factor)?;
            project(g, z, ps)
        })));
        out.push(("sum", fd_check(&[x.clone()], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })));
        out.push(("mean", fd_check(&[x.clone()], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.mean(sq)
        })));
        out.push(("row_sum", fd_check(&[x.clone()], |g, v| {
            let z = g.row_sum(v[0])?;
            project(g, z, ps)
        })));

        let xv = uniform(&mut r, &[m], -2.0, 2.0);
        let w: Vec<f64> = (0..m).map(|_| r.random_range(0.0..1.0)).collect();
        out.push(("weighted_mean", fd_check(&[xv], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.weighted_mean(sq, &w)
        })));

        let labels: Vec<usize> = (0..m).map(|_| r.random_range(0..n)).collect();
        out.push(("pick", fd_check(&[x.clone()], |g, v| {
            let z = g.pick(v[0], &labels)?;
            project(g, z, ps)
        })));

        let logits = uniform(&mut r, &[m, n], -3.0, 3.0);
        out.push(("hard_loss", fd_check(&[logits.clone()], |g, v| {
            distill::hard_loss(g, v[0], &labels)
        })));

        let teacher = uniform(&mut r, &[m, n], -3.0, 3.0);
        let peer = uniform(&mut r, &[m, n], -3.0, 3.0);
        for dir in [KlDirection::StudentFirst, KlDirection::TargetFirst] {
            out.push(("teacher_loss", fd_check(&[logits.clone()], |g, v| {
                distill::teacher_loss(g, v[0], &teacher, &w, tau, dir)
            })));
            out.push(("peer_loss", fd_check(&[logits.clone()], |g, v| {
                let p = g.constant(&peer)?;
                distill::peer_loss(g, v[0], p, tau, dir)
            })));
        }

        let weights = LossWeights::new(r.random(), r.random(), r.random());
        out.push(("total_loss", fd_check(&[logits.clone()], |g, v| {
            let h = distill::hard_loss(g, v[0], &labels)?;
            let t = distill::teacher_loss(g, v[0], &teacher, &w, tau, KlDirection::StudentFirst)?;
            let p = g.constant(&peer)?;
            let pl = distill::peer_loss(g, v[0], p, tau, KlDirection::StudentFirst)?;
            Ok(distill::total_loss(g, h, Some(t), Some(pl), weights, tau)?.0)
        })));

        // Two-layer MLP, gradients with respect to every parameter.
        let d = r.random_range(2..5);
        let hdim = r.random_range(2..6);
        let input = uniform(&mut r, &[m, d], -1.0, 1.0);
        let params = [
            uniform(&mut r, &[d, hdim], -1.0, 1.0),
            uniform(&mut r, &[hdim], -0.5, 0.5),
            uniform(&mut r, &[hdim, n], -1.0, 1.0),
            uniform(&mut r, &[n], -0.5, 0.5),
        ];
        out.push(("mlp_total_loss", fd_check(&params, |g, v| {
            let x = g.constant(&input)?;
            let z = g.matmul(x, v[0])?;
            let z = g.add_bias(z, v[1])?;
            let z = g.relu(z);
            let z = g.matmul(z, v[2])?;
            let logits = g.add_bias(z, v[3])?;
            let h = distill::hard_loss(g, logits, &labels)?;
            let t = distill::teacher_loss(g, logits, &teacher, &w, tau, KlDirection::StudentFirst)?;
            let p = g.constant(&peer)?;
            let pl = distill::peer_loss(g, logits, p, tau, KlDirection::StudentFirst)?;
            Ok(distill::total_loss(g, h, Some(t), Some(pl), weights, tau)?.0)
        })));
    }
    out
}
