//! Multilayer perceptrons standing in for the teacher and the two students.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradcore::{Gradients, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// ReLU MLP `input → hidden... → classes` with linear output.
pub fn mlp_spec(input: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

/// Checks dims are positive, chain, and that the last layer emits logits.
pub fn validate_spec(spec: &[LayerSpec]) -> Result<()> {
    for (i, l) in spec.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::Spec(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in spec.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Spec(format!(
                "layer {i} emits {} features but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    if let Some(last) = spec.last() {
        if last.activation != Activation::None {
            return Err(Error::Spec("final layer must emit logits (activation = none)".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `in_dim × out_dim`, row-major.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Graph handles for the parameters of one forward pass, in layer order.
#[derive(Debug, Clone, Default)]
pub struct ParamBinding {
    vars: Vec<(Var, Var)>,
}

impl ParamBinding {
    /// `(weight, bias)` handles per layer.
    pub fn vars(&self) -> &[(Var, Var)] {
        &self.vars
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    frozen: bool,
}

impl Network {
    /// He-normal weights (std = sqrt(2 / in_dim)) and zero biases, drawn
    /// deterministically from `seed`.
    pub fn build(spec: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_spec(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .iter()
            .map(|&l| {
                let std = (2.0 / l.in_dim as f64).sqrt();
                let w: Vec<f64> = (0..l.in_dim * l.out_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect();
                Layer {
                    spec: l,
                    weight: Tensor::new(vec![l.in_dim, l.out_dim], w)
                        .expect("shape matches")
                        .with_requires_grad(true),
                    bias: Tensor::zeros(&[l.out_dim]).with_requires_grad(true),
                }
            })
            .collect();
        Ok(Self {
            layers,
            frozen: false,
        })
    }

    /// Assembles a network from explicit parameters (used by checkpoint loading
    /// and hand-built tests).
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let spec: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_spec(&spec)?;
        let mut layers = layers;
        for l in &mut layers {
            if l.weight.shape() != [l.spec.in_dim, l.spec.out_dim] || l.bias.numel() != l.spec.out_dim {
                return Err(Error::Spec("parameter shapes do not match layer spec".into()));
            }
            l.weight.set_requires_grad(true);
            l.bias.set_requires_grad(true);
        }
        Ok(Self {
            layers,
            frozen: false,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the network read-only: gradients are no longer tracked.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for t in self.params_mut() {
            t.set_requires_grad(false);
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("weight_{i}"), &l.weight));
            out.push((format!("bias_{i}"), &l.bias));
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.spec())
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in self.params() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn zero_grad(&mut self) {
        crate::gradcore::zero_grad(self.params_mut());
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, cols) = x.expect_matrix("forward")?;
        if cols != self.input_dim() {
            return Err(Error::Dimension {
                op: "forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        Ok(())
    }

    /// Records the forward pass in `graph`. Parameters of a frozen network
    /// enter as constants, so the returned binding is empty and no gradient
    /// path exists.
    pub fn forward(&self, graph: &mut Graph, x: Var) -> Result<(Var, ParamBinding)> {
        self.check_input(graph.value(x))?;
        let mut binding = ParamBinding::default();
        let mut h = x;
        for l in &self.layers {
            let (w, b) = if self.frozen {
                (graph.constant(&l.weight)?, graph.constant(&l.bias)?)
            } else {
                let pair = (graph.param(&l.weight)?, graph.param(&l.bias)?);
                binding.vars.push(pair);
                pair
            };
            let z = graph.matmul(h, w)?;
            h = graph.add_bias(z, b)?;
            if l.spec.activation == Activation::Relu {
                h = graph.relu(h);
            }
        }
        Ok((h, binding))
    }

    /// Graph-free forward pass; bit-identical to [`Network::forward`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.detached();
        for l in &self.layers {
            h = h.matmul(&l.weight)?.add_row_bias(&l.bias)?;
            if l.spec.activation == Activation::Relu {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Deposits the gradients of one backward pass into the parameters.
    pub fn accumulate_grads(&mut self, grads: &Gradients, binding: &ParamBinding) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        if binding.vars.len() != self.layers.len() {
            return Err(Error::Contract("parameter binding does not belong to this network".into()));
        }
        for (l, &(w, b)) in self.layers.iter_mut().zip(&binding.vars) {
            grads.accumulate_into(w, &mut l.weight)?;
            grads.accumulate_into(b, &mut l.bias)?;
        }
        Ok(())
    }
}

/// `Σ (in·out + out)` over the layers.
pub fn param_count(spec: &[LayerSpec]) -> usize {
    spec.iter().map(|l| l.in_dim * l.out_dim + l.out_dim).sum()
}

/// `teacher / student`, rounded half-up to two decimals.
pub fn compression_ratio(teacher_params: f64, student_params: f64) -> Result<f64> {
    if !(student_params > 0.0) || !(teacher_params > 0.0) {
        return Err(Error::Parameter(format!(
            "parameter counts must be positive (teacher {teacher_params}, student {student_params})"
        )));
    }
    let ratio = teacher_params / student_params;
    Ok((ratio * 100.0 + 0.5).floor() / 100.0)
}
