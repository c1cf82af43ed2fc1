//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and the parent indices
//! its backward rule needs. Parents always precede children, so a backward
//! pass is a single sweep over the nodes in reverse insertion order.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Input value. `tracked` leaves receive gradients.
    Leaf,
    /// Value copy of another node; gradient stops here.
    Detach,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    LogSoftmax(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    WeightedMean(Var, Vec<f64>),
    Pick(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Append-only operation record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, or `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `target`'s gradient slot. Unreached
    /// nodes contribute zeros, so every requires-grad leaf ends up with a
    /// populated gradient.
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => target.accumulate_grad(g),
            None => {
                let zeros = vec![0.0; target.numel()];
                target.accumulate_grad(&zeros)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Whether gradients can flow from `var` back to some tracked leaf.
    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Leaf whose gradient is tracked iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        let value = t.detached().ensure_finite("param")?;
        Ok(self.push(Op::Leaf, value, t.requires_grad()))
    }

    /// Untracked leaf.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        let value = t.detached().ensure_finite("constant")?;
        Ok(self.push(Op::Leaf, value, false))
    }

    /// Value-identical node with no gradient path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(Op::Detach, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, tracked))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_bias(self.value(bias))?;
        let tracked = self.tracked_any(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), value, tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let tracked = self.tracked_any(&[x]);
        self.push(Op::Relu(x), value, tracked)
    }

    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        let value = self.value(x).log_softmax(temperature)?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::LogSoftmax(x, temperature), value, tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = match op {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            _ => "mul",
        };
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?.ensure_finite(name)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(op, value, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v.exp()).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?.ensure_finite("exp")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::Exp(x), value, tracked))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?.ensure_finite("scale")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::Scale(x, factor), value, tracked))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let value = Tensor::scalar(total).ensure_finite("sum")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::Sum(x), value, tracked))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.numel() == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let total: f64 = src.data().iter().sum();
        let value = Tensor::scalar(total / src.numel() as f64).ensure_finite("mean")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::Mean(x), value, tracked))
    }

    /// Sums each row of an `m×n` matrix into a length-`m` vector.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let (m, _) = src.expect_matrix("row_sum")?;
        let data = (0..m).map(|i| src.row(i).iter().sum()).collect();
        let value = Tensor::vector(data).ensure_finite("row_sum")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::RowSum(x), value, tracked))
    }

    /// `Σ_i weights[i] · x[i] / n` for a length-`n` vector `x`. The weights
    /// are constants: no gradient flows into them.
    pub fn weighted_mean(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let src = self.value(x);
        if src.shape().len() != 1 || src.numel() != weights.len() || weights.is_empty() {
            return Err(Error::Dimension {
                op: "weighted_mean",
                lhs: src.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let total: f64 = src.data().iter().zip(weights).map(|(v, w)| w * v).sum();
        let value = Tensor::scalar(total / weights.len() as f64).ensure_finite("weighted_mean")?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::WeightedMean(x, weights.to_vec()), value, tracked))
    }

    /// Selects `x[i, index[i]]` from each row of an `m×n` matrix.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let (m, n) = src.expect_matrix("pick")?;
        if index.len() != m {
            return Err(Error::Dimension {
                op: "pick",
                lhs: vec![m, n],
                rhs: vec![index.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &j) in index.iter().enumerate() {
            if j >= n {
                return Err(Error::Label {
                    label: j,
                    classes: n,
                });
            }
            data.push(src.data()[i * n + j]);
        }
        let value = Tensor::vector(data);
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Op::Pick(x, index.to_vec()), value, tracked))
    }

    /// Reverse sweep from a scalar `loss`. The graph is left intact, so
    /// calling this again yields the same gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, delta: Vec<f64>) {
        if !self.nodes[to.0].tracked {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                if self.is_tracked(*a) {
                    let ga = gt.matmul(&self.value(*b).transpose()?)?;
                    self.send(grads, *a, ga.into_data());
                }
                if self.is_tracked(*b) {
                    let gb = self.value(*a).transpose()?.matmul(&gt)?;
                    self.send(grads, *b, gb.into_data());
                }
            }
            Op::AddBias(x, b) => {
                self.send(grads, *x, g.to_vec());
                if self.is_tracked(*b) {
                    let n = self.value(*b).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                    }
                    self.send(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let delta = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.send(grads, *x, delta);
            }
            Op::LogSoftmax(x, temperature) => {
                // d/dz_k Σ_j g_j y_j = (g_k − softmax_k · Σ_j g_j) / τ
                let c = node.value.cols();
                let mut delta = Vec::with_capacity(g.len());
                for (y_row, g_row) in node.value.data().chunks(c).zip(g.chunks(c)) {
                    let g_sum: f64 = g_row.iter().sum();
                    delta.extend(
                        y_row
                            .iter()
                            .zip(g_row)
                            .map(|(y, gv)| (gv - y.exp() * g_sum) / temperature),
                    );
                }
                self.send(grads, *x, delta);
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.is_tracked(*a) {
                    self.send(grads, *a, g.iter().zip(vb).map(|(gv, y)| gv * y).collect());
                }
                if self.is_tracked(*b) {
                    self.send(grads, *b, g.iter().zip(va).map(|(gv, x)| gv * x).collect());
                }
            }
            Op::Exp(x) => {
                let delta = node.value.data().iter().zip(g).map(|(y, gv)| gv * y).collect();
                self.send(grads, *x, delta);
            }
            Op::Scale(x, factor) => {
                self.send(grads, *x, g.iter().map(|gv| gv * factor).collect());
            }
            Op::Sum(x) => {
                self.send(grads, *x, vec![g[0]; self.value(*x).numel()]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.send(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::RowSum(x) => {
                let src = self.value(*x);
                let n = src.cols();
                let delta = g.iter().flat_map(|&gv| std::iter::repeat_n(gv, n)).collect();
                self.send(grads, *x, delta);
            }
            Op::WeightedMean(x, weights) => {
                let n = weights.len() as f64;
                self.send(grads, *x, weights.iter().map(|w| g[0] * w / n).collect());
            }
            Op::Pick(x, index) => {
                let n = self.value(*x).cols();
                let mut delta = vec![0.0; self.value(*x).numel()];
                for (i, (&j, gv)) in index.iter().zip(g).enumerate() {
                    delta[i * n + j] += gv;
                }
                self.send(grads, *x, delta);
            }
        }
        Ok(())
    }
}
